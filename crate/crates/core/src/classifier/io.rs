//! Parameter file: the shared tensor container with magic `FSVP`, one entry
//! per [`ParamTensor`] in declaration order, followed by a rank-1 metadata
//! entry `[epochs_trained, test_accuracy]` (accuracy NaN when unknown).

use std::fs;
use std::path::Path;

use super::{ClassifierParams, ParamTensor, TrainingMetadata};
use crate::binfmt;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"FSVP";
pub const PARAMS_VERSION: u32 = 1;

pub fn write_params(params: &ClassifierParams) -> Vec<u8> {
    let meta = [
        f64::from(params.metadata.epochs_trained),
        params.metadata.test_accuracy.unwrap_or(f64::NAN),
    ];
    let mut entries: Vec<(&[usize], &[f64])> = ParamTensor::ALL
        .iter()
        .map(|&t| (t.shape(), params.tensor(t)))
        .collect();
    entries.push((&[2], &meta));
    binfmt::encode(PARAMS_MAGIC, PARAMS_VERSION, &entries)
}

pub fn read_params(bytes: &[u8], origin: &Path) -> Result<ClassifierParams> {
    let mut entries =
        binfmt::decode(PARAMS_MAGIC, PARAMS_VERSION, bytes).map_err(|e| Error::format(origin, e))?;
    if entries.len() != ParamTensor::ALL.len() + 1 {
        return Err(Error::format(
            origin,
            format!("expected {} entries, found {}", ParamTensor::ALL.len() + 1, entries.len()),
        ));
    }
    let meta = entries.pop().expect("length checked");
    if meta.dims != [2] {
        return Err(Error::format(origin, "malformed metadata entry"));
    }
    let epochs = meta.values[0];
    if !(epochs >= 0.0 && epochs <= f64::from(u32::MAX) && epochs.fract() == 0.0) {
        return Err(Error::format(origin, format!("invalid epoch count {epochs}")));
    }
    let metadata = TrainingMetadata {
        epochs_trained: epochs as u32,
        test_accuracy: Some(meta.values[1]).filter(|a| !a.is_nan()),
    };
    for (t, entry) in ParamTensor::ALL.iter().zip(&entries) {
        if entry.dims != t.shape() {
            return Err(Error::format(
                origin,
                format!("{t:?}: dims {:?}, expected {:?}", entry.dims, t.shape()),
            ));
        }
    }
    ClassifierParams::from_tensors(entries.into_iter().map(|e| e.values).collect(), metadata)
        .map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save_params(params: &ClassifierParams, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ClassifierParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = ClassifierParams::init(42);
        params.metadata = TrainingMetadata {
            epochs_trained: 5,
            test_accuracy: Some(0.9876),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fsvp");
        save_params(&params, &path).unwrap();
        let back = load_params(&path).unwrap();
        for t in ParamTensor::ALL {
            let a: Vec<u64> = params.tensor(t).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.tensor(t).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(back.metadata, params.metadata);
    }

    #[test]
    fn unknown_accuracy_survives() {
        let params = ClassifierParams::init(1);
        let back = read_params(&write_params(&params), Path::new("mem")).unwrap();
        assert_eq!(back.metadata.test_accuracy, None);
    }

    #[test]
    fn empty_and_foreign_files_are_format_errors() {
        assert!(matches!(read_params(&[], Path::new("e")), Err(Error::Format { .. })));
        let mut bytes = write_params(&ClassifierParams::init(1));
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(read_params(&bytes, Path::new("m")), Err(Error::Format { .. })));
        let good = write_params(&ClassifierParams::init(1));
        assert!(matches!(
            read_params(&good[..good.len() - 3], Path::new("t")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let mut params = ClassifierParams::init(1);
        params.tensor_mut(ParamTensor::DenseBias)[0] = 1.0;
        let mut bytes = write_params(&params);
        // the only 1.0 in the payload is the dense bias set above
        let marker = 1.0f64.to_le_bytes();
        let pos = bytes
            .windows(8)
            .rposition(|w| w == marker)
            .expect("marker present");
        bytes[pos..pos + 8].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(read_params(&bytes, Path::new("inf")).is_err());
    }
}
