//! Ready-made definitions for the 3-D stencil/element-wise kernels of a
//! large-eddy simulation code (`advec_u`, `diff_uvw`): block size, tiling,
//! unrolling, tile contiguity, block unravel order and blocks-per-SM.
//!
//! Kernel arguments: `arg0` output field, `arg1` input field, `arg2..arg4`
//! grid extents (itot, jtot, ktot).

use crate::kerneldef::{KernelBuilder, KernelDefinition, KernelSource};

pub const MAX_THREADS_PER_BLOCK: &str = "block_x * block_y * block_z <= 1024";

pub const UNRAVEL_ORDERS: [&str; 6] = ["XYZ", "XZY", "YXZ", "YZX", "ZXY", "ZYX"];

/// `precision` is pasted as the first template argument (`float`/`double`).
/// With `thread_limit` the space also carries [`MAX_THREADS_PER_BLOCK`].
pub fn stencil_kernel(name: &str, precision: &str, thread_limit: bool) -> KernelDefinition {
    let mut b = KernelBuilder::new(name, KernelSource::file(format!("{name}.cu")));
    b.tune_with_default("block_x", [16i64, 32, 64, 128, 256], 256i64)
        .tune_with_default("block_y", [1i64, 2, 4, 8, 16], 1i64)
        .tune_with_default("block_z", [1i64, 2, 4, 8, 16], 1i64)
        .tune_with_default("tile_x", [1i64, 2, 4], 1i64)
        .tune_with_default("tile_y", [1i64, 2, 4], 1i64)
        .tune_with_default("tile_z", [1i64, 2, 4], 1i64)
        .tune_with_default("unroll_x", [true, false], false)
        .tune_with_default("unroll_y", [true, false], false)
        .tune_with_default("unroll_z", [true, false], false)
        .tune_with_default("contiguous_x", [true, false], false)
        .tune_with_default("contiguous_y", [true, false], false)
        .tune_with_default("contiguous_z", [true, false], false)
        .tune_with_default("unravel", UNRAVEL_ORDERS, "XYZ")
        .tune_with_default("min_blocks", [1i64, 2, 3, 4, 5, 6], 1i64);
    if thread_limit {
        b.restriction(MAX_THREADS_PER_BLOCK);
    }
    let precision = format!("\"{precision}\"");
    b.template_args(&[
        precision.as_str(),
        "block_x",
        "block_y",
        "block_z",
        "tile_x",
        "tile_y",
        "tile_z",
    ])
    .define("UNROLL_X", "unroll_x")
    .define("UNROLL_Y", "unroll_y")
    .define("UNROLL_Z", "unroll_z")
    .define("TILE_CONTIGUOUS_X", "contiguous_x")
    .define("TILE_CONTIGUOUS_Y", "contiguous_y")
    .define("TILE_CONTIGUOUS_Z", "contiguous_z")
    .define("UNRAVEL_ORDER", "unravel")
    .define("MIN_BLOCKS_PER_SM", "min_blocks")
    .compiler_flags(&["-std=c++17", "--use_fast_math"])
    .problem_size(&["arg2", "arg3", "arg4"])
    .block_size(&["block_x", "block_y", "block_z"])
    .grid_divisors(&["block_x * tile_x", "block_y * tile_y", "block_z * tile_z"]);
    b.build().expect("bundled definition is well-formed")
}
