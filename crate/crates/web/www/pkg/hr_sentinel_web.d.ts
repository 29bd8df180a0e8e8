/* tslint:disable */
/* eslint-disable */

export class WebDemo {
    free(): void;
    [Symbol.dispose](): void;
    generate(duration_s: number, artifact_rate_per_hour: number): string;
    hasModel(): boolean;
    label(tau_a: number, tau_b: number): string;
    constructor(seed: number);
    /**
     * `taus` is a comma-separated list such as `"10,20,30"`.
     */
    sweep(taus: string): string;
    train(max_epochs: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_webdemo_free: (a: number, b: number) => void;
    readonly webdemo_generate: (a: number, b: number, c: number) => [number, number, number, number];
    readonly webdemo_hasModel: (a: number) => number;
    readonly webdemo_label: (a: number, b: number, c: number) => [number, number, number, number];
    readonly webdemo_new: (a: number) => number;
    readonly webdemo_sweep: (a: number, b: number, c: number) => [number, number, number, number];
    readonly webdemo_train: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
