/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const ema_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
export const pseudo_label_summary: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
export const weight_curve: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
