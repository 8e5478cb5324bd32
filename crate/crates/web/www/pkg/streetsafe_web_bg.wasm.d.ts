/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_citydemo_free: (a: number, b: number) => void;
export const citydemo_ablation: (a: number, b: number) => [number, number, number, number];
export const citydemo_anchors: (a: number) => [number, number];
export const citydemo_held_out: (a: number, b: number) => [number, number, number, number];
export const citydemo_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const citydemo_pairs: (a: number) => number;
export const citydemo_points: (a: number) => [number, number];
export const citydemo_score: (a: number, b: number) => [number, number, number, number];
export const citydemo_spearman: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
