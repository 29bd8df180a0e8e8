/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_webdemo_free: (a: number, b: number) => void;
export const webdemo_generate: (a: number, b: number, c: number) => [number, number, number, number];
export const webdemo_hasModel: (a: number) => number;
export const webdemo_label: (a: number, b: number, c: number) => [number, number, number, number];
export const webdemo_new: (a: number) => number;
export const webdemo_sweep: (a: number, b: number, c: number) => [number, number, number, number];
export const webdemo_train: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
