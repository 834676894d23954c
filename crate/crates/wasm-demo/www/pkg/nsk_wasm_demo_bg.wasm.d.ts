/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_response_free: (a: number, b: number) => void;
export const kernel_decay: (a: number) => [number, number, number, number];
export const linear_response: (a: number, b: number, c: number, d: number) => [number, number, number];
export const mode_decay: (a: number, b: number, c: number, d: number) => [number, number];
export const response_n: (a: number) => number;
export const response_sigma: (a: number) => [number, number];
export const response_speed: (a: number) => [number, number];
export const response_vartheta: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
