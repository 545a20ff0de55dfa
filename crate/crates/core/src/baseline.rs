//! The non-learning comparison allocator.

use crate::env::{Allocation, Budgets};
use crate::error::{Error, Result};

/// Splits each budget evenly across the classes, every decision alike.
pub fn equal_slice(budgets: &Budgets, classes: usize) -> Result<Allocation> {
    if classes == 0 {
        return Err(Error::InvalidArg("cannot slice across zero classes".into()));
    }
    let k = classes as f64;
    Ok(Allocation {
        bandwidth: vec![budgets.bandwidth / k; classes],
        compute: vec![budgets.compute / k; classes],
    })
}
