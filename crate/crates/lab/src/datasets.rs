use std::fs;
use std::path::{Path, PathBuf};

use metabnn_core::data::{parse_idx, LabeledDataset};

use crate::error::{LabError, Result};
use crate::fetch::{self, HttpTransport, Transport};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// `$METABNN_DATA`, or `data/` at the workspace root.
pub fn default_data_dir() -> PathBuf {
    match std::env::var_os("METABNN_DATA") {
        Some(p) => PathBuf::from(p),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn read_idx(path: &Path) -> Result<metabnn_core::data::Idx> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    parse_idx(&bytes).map_err(|e| LabError::Data(format!("{}: {e} (code {})", path.display(), e.code())))
}

/// Verifies (downloading if needed) and parses one dataset. `mirrors` is
/// the text of a mirror list in the format of `config/mirrors.txt`.
pub fn load_with(name: &str, cache_dir: &Path, mirrors: &str, transport: &dyn Transport) -> Result<Splits> {
    let digests = fetch::builtin_digests(name)?;
    let mirrors = fetch::parse_mirrors(mirrors, name)?;
    fetch::fetch_dataset(name, cache_dir, &mirrors, &digests, transport)?;
    let dir = cache_dir.join(name);
    let split = |images: &str, labels: &str, tag: &str| -> Result<LabeledDataset> {
        LabeledDataset::from_idx(format!("{name}-{tag}"), read_idx(&dir.join(images))?, read_idx(&dir.join(labels))?)
            .map_err(|e| LabError::Data(format!("{name} {tag}: {e}")))
    };
    Ok(Splits {
        train: split(TRAIN_IMAGES, TRAIN_LABELS, "train")?,
        test: split(TEST_IMAGES, TEST_LABELS, "test")?,
    })
}

/// [`load_with`] over HTTP using the bundled mirror list.
pub fn load(name: &str, cache_dir: &Path) -> Result<Splits> {
    load_with(name, cache_dir, fetch::MIRRORS, &HttpTransport::default())
}
