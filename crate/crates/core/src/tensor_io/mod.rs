//! File formats exchanged with external training systems, plus the
//! validated containers the rest of the crate operates on.

mod data;
pub mod npy;

pub use data::{
    load_labels, load_predictions, read_tensor, LabelSet, McPredictions, Task, RANGE_SLACK,
    ROW_SUM_TOL,
};
pub use npy::{read_npy, write_npy, Dtype, TensorData, TensorFile};

/// Write bytes to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
