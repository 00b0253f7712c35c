use super::segment::WindowDataset;
use crate::error::{Error, Result};

/// Holds out the temporally last `test_count` windows; no shuffling.
pub fn train_test_split(dataset: &WindowDataset, test_count: usize) -> Result<(WindowDataset, WindowDataset)> {
    let d = dataset.len();
    if test_count > d {
        return Err(Error::validation(format!(
            "cannot hold out {test_count} of {d} windows"
        )));
    }
    let cut = d - test_count;
    Ok((dataset.slice(0..cut), dataset.slice(cut..d)))
}
