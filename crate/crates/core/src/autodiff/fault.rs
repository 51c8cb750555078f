//! Test hook: flip the sign of one op's backward rule on the current thread.
//!
//! Graphs capture the active fault when they are created.

use std::cell::Cell;

thread_local! {
    static FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Op names accepted by [`inject`].
pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_scalar",
    "recip",
    "exp",
    "rsqrt",
    "tanh",
    "sigmoid",
    "relu",
    "clip",
    "matmul",
    "broadcast_rows",
    "sum_rows",
    "broadcast_cols",
    "sum_cols",
    "sum",
    "expand",
    "reshape",
    "slice",
    "pad",
    "concat_cols",
    "im2col",
    "col2im",
    "batch_transpose",
];

/// Restores the previous fault on drop.
pub struct FaultGuard(Option<&'static str>);

impl Drop for FaultGuard {
    fn drop(&mut self) {
        FAULT.with(|f| f.set(self.0));
    }
}

/// Flips the backward of `op` for graphs built while the guard is alive.
/// Returns `None` for an unknown op name.
pub fn inject(op: &str) -> Option<FaultGuard> {
    let name = OP_NAMES.iter().find(|n| **n == op)?;
    Some(FaultGuard(FAULT.with(|f| f.replace(Some(name)))))
}

pub(crate) fn active() -> Option<&'static str> {
    FAULT.with(|f| f.get())
}
