//! Detection benchmark: benign images mixed with the adversarials crafted from
//! them, shuffled by seed, persisted as a directory of image files plus a
//! text manifest.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledSet;
use crate::binfmt;
use crate::error::{Error, Result};
use crate::image::{format_shape, Image, Label};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const IMAGE_MAGIC: &[u8; 4] = b"FSVI";
const IMAGE_VERSION: u32 = 1;
const IMAGE_EXT: &str = "fsvi";
const MANIFEST_TITLE: &str = "# advsieve benchmark v1";
const MANIFEST_HEADER: &str = "id, ground_truth, origin_label, target_label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundTruth {
    Benign,
    Adversarial,
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundTruth::Benign => "benign",
            GroundTruth::Adversarial => "adversarial",
        })
    }
}

impl FromStr for GroundTruth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "benign" => Ok(GroundTruth::Benign),
            "adversarial" => Ok(GroundTruth::Adversarial),
            other => Err(format!("unknown ground truth {other:?}")),
        }
    }
}

/// A successful attack: the adversarial image, the label of the clean image
/// it came from, and the label it is now classified as.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRecord {
    pub image: Image,
    pub origin: Label,
    pub target: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSample {
    pub id: usize,
    pub image: Image,
    pub truth: GroundTruth,
    pub origin: Label,
    pub target: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    samples: Vec<BenchmarkSample>,
    seed: Option<u64>,
}

/// Concatenates benign and adversarial samples and shuffles them with `seed`.
/// Ids are positions in the shuffled order.
pub fn build_benchmark(
    benign: &LabeledSet,
    adversarials: &[AdversarialRecord],
    seed: u64,
) -> Result<BenchmarkSet> {
    let mut set = BenchmarkSet::unshuffled(benign, adversarials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    set.samples.shuffle(&mut rng);
    for (id, s) in set.samples.iter_mut().enumerate() {
        s.id = id;
    }
    set.seed = Some(seed);
    Ok(set)
}

impl BenchmarkSet {
    /// Benign samples first, then adversarials, in input order; no shuffling.
    pub fn unshuffled(benign: &LabeledSet, adversarials: &[AdversarialRecord]) -> Result<Self> {
        for (i, rec) in adversarials.iter().enumerate() {
            if rec.origin == rec.target {
                return Err(Error::BenchmarkRecord {
                    id: benign.len() + i,
                    reason: format!("origin and target are both {}", rec.origin),
                });
            }
        }
        let mut samples = Vec::with_capacity(benign.len() + adversarials.len());
        for (image, label) in benign.iter() {
            samples.push(BenchmarkSample {
                id: samples.len(),
                image: image.clone(),
                truth: GroundTruth::Benign,
                origin: label,
                target: None,
            });
        }
        for rec in adversarials {
            samples.push(BenchmarkSample {
                id: samples.len(),
                image: rec.image.clone(),
                truth: GroundTruth::Adversarial,
                origin: rec.origin,
                target: Some(rec.target),
            });
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.image.shape() != first.image.shape()) {
                return Err(Error::BenchmarkRecord {
                    id: bad.id,
                    reason: format!(
                        "image shape {} differs from {}",
                        format_shape(bad.image.shape()),
                        format_shape(first.image.shape())
                    ),
                });
            }
        }
        Ok(Self {
            samples,
            seed: None,
        })
    }

    pub fn samples(&self) -> &[BenchmarkSample] {
        &self.samples
    }

    /// Shuffle seed, when the set was shuffled.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, truth: GroundTruth) -> usize {
        self.samples.iter().filter(|s| s.truth == truth).count()
    }

    /// Splits back into the benign set and the adversarial records, in id order.
    pub fn split(&self) -> Result<(LabeledSet, Vec<AdversarialRecord>)> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut adversarials = Vec::new();
        for s in &self.samples {
            match (s.truth, s.target) {
                (GroundTruth::Benign, _) => {
                    images.push(s.image.clone());
                    labels.push(s.origin);
                }
                (GroundTruth::Adversarial, Some(target)) => adversarials.push(AdversarialRecord {
                    image: s.image.clone(),
                    origin: s.origin,
                    target,
                }),
                (GroundTruth::Adversarial, None) => {
                    return Err(Error::BenchmarkRecord {
                        id: s.id,
                        reason: "adversarial sample without a target".into(),
                    })
                }
            }
        }
        Ok((LabeledSet::new(images, labels, vec!["benchmark split".into()])?, adversarials))
    }

    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_TITLE);
        out.push('\n');
        match self.seed {
            Some(seed) => out.push_str(&format!("# seed = {seed}\n")),
            None => out.push_str("# seed = none\n"),
        }
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for s in &self.samples {
            let target = s.target.map_or_else(|| "-".to_string(), |t| t.to_string());
            out.push_str(&format!("{:05}, {}, {}, {}\n", s.id, s.truth, s.origin, target));
        }
        out
    }

    /// Writes `manifest.txt` and one `NNNNN.fsvi` per sample into `dir`,
    /// replacing any benchmark files already there.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == IMAGE_EXT) {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        for s in &self.samples {
            let path = dir.join(image_file_name(s.id));
            fs::write(&path, encode_image(&s.image)).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = dir.join(MANIFEST_FILE);
        fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let (seed, rows) = parse_manifest(&text, &manifest_path)?;
        let mut samples = Vec::with_capacity(rows.len());
        for row in rows {
            let path = dir.join(image_file_name(row.id));
            let bytes = fs::read(&path).map_err(|e| Error::BenchmarkRecord {
                id: row.id,
                reason: format!("cannot read {}: {e}", path.display()),
            })?;
            let image = decode_image(&bytes).map_err(|reason| Error::BenchmarkRecord {
                id: row.id,
                reason: format!("{}: {reason}", path.display()),
            })?;
            samples.push(BenchmarkSample {
                id: row.id,
                image,
                truth: row.truth,
                origin: row.origin,
                target: row.target,
            });
        }
        Ok(Self { samples, seed })
    }
}

/// One line of the manifest.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ManifestRow {
    pub id: usize,
    pub truth: GroundTruth,
    pub origin: Label,
    pub target: Option<Label>,
}

pub(crate) fn parse_manifest(text: &str, path: &Path) -> Result<(Option<u64>, Vec<ManifestRow>)> {
    let mut seed = None;
    let mut rows: Vec<ManifestRow> = Vec::new();
    let mut seen_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let bad = |reason: String| Error::format(path, format!("line {}: {reason}", lineno + 1));
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(value) = comment.trim().strip_prefix("seed =") {
                let value = value.trim();
                seed = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?)
                };
            }
            continue;
        }
        if !seen_header {
            if line != MANIFEST_HEADER {
                return Err(bad(format!("expected header {MANIFEST_HEADER:?}")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let id: usize = fields[0].parse().map_err(|_| bad(format!("bad id {:?}", fields[0])))?;
        let truth: GroundTruth = fields[1].parse().map_err(bad)?;
        let label = |s: &str| -> Result<Label> {
            let idx: usize = s.parse().map_err(|_| bad(format!("bad label {s:?}")))?;
            Label::new(idx)
        };
        let origin = label(fields[2])?;
        let target = match fields[3] {
            "-" => None,
            s => Some(label(s)?),
        };
        let record_err = |reason: &str| Error::BenchmarkRecord {
            id,
            reason: reason.to_string(),
        };
        match (truth, target) {
            (GroundTruth::Benign, Some(_)) => return Err(record_err("benign sample with a target")),
            (GroundTruth::Adversarial, None) => return Err(record_err("adversarial sample without a target")),
            (GroundTruth::Adversarial, Some(t)) if t == origin => {
                return Err(record_err("target equals origin"))
            }
            _ => {}
        }
        if rows.last().is_some_and(|r| r.id >= id) {
            return Err(record_err("ids must be strictly increasing"));
        }
        rows.push(ManifestRow {
            id,
            truth,
            origin,
            target,
        });
    }
    if !seen_header {
        return Err(Error::format(path, "missing manifest header"));
    }
    Ok((seed, rows))
}

fn image_file_name(id: usize) -> String {
    format!("{id:05}.{IMAGE_EXT}")
}

pub(crate) fn encode_image(image: &Image) -> Vec<u8> {
    let (h, w, c) = image.shape();
    binfmt::encode(IMAGE_MAGIC, IMAGE_VERSION, &[(&[h, w, c], image.data())])
}

pub(crate) fn decode_image(bytes: &[u8]) -> Result<Image, String> {
    let mut entries = binfmt::decode(IMAGE_MAGIC, IMAGE_VERSION, bytes)?;
    if entries.len() != 1 || entries[0].dims.len() != 3 {
        return Err("expected a single rank-3 entry".into());
    }
    let t = entries.pop().expect("one entry");
    Image::new(t.dims[0], t.dims[1], t.dims[2], t.values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benign(n: usize) -> LabeledSet {
        let images = (0..n)
            .map(|i| Image::filled(3, 3, 1, i as f64 / (n as f64 + 1.0)).unwrap())
            .collect();
        LabeledSet::new(images, vec![Label::new(0).unwrap(); n], vec![]).unwrap()
    }

    fn adversarials(n: usize) -> Vec<AdversarialRecord> {
        (0..n)
            .map(|i| AdversarialRecord {
                image: Image::filled(3, 3, 1, 1.0 - i as f64 / (n as f64 + 1.0)).unwrap(),
                origin: Label::new(0).unwrap(),
                target: Label::new(1 + i % 9).unwrap(),
            })
            .collect()
    }

    #[test]
    fn sizes_and_imbalance_are_preserved() {
        let set = build_benchmark(&benign(20), &adversarials(180), 5).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(set.count(GroundTruth::Benign), 20);
        assert_eq!(set.count(GroundTruth::Adversarial), 180);
        assert!(set.samples().iter().enumerate().all(|(i, s)| s.id == i));
        // shuffled: benign samples are not all at the front
        assert!(set.samples()[..20].iter().any(|s| s.truth == GroundTruth::Adversarial));
    }

    #[test]
    fn all_benign_is_valid() {
        let set = build_benchmark(&benign(4), &[], 1).unwrap();
        assert_eq!(set.count(GroundTruth::Benign), 4);
    }

    #[test]
    fn origin_equal_target_is_rejected() {
        let mut recs = adversarials(2);
        recs[1].origin = Label::new(3).unwrap();
        recs[1].target = Label::new(3).unwrap();
        assert!(matches!(
            build_benchmark(&benign(1), &recs, 0),
            Err(Error::BenchmarkRecord { id: 2, .. })
        ));
    }

    #[test]
    fn shuffle_is_seeded() {
        let a = build_benchmark(&benign(5), &adversarials(20), 3).unwrap();
        let b = build_benchmark(&benign(5), &adversarials(20), 3).unwrap();
        let c = build_benchmark(&benign(5), &adversarials(20), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = build_benchmark(&benign(3), &adversarials(6), 9).unwrap();
        set.save(dir.path()).unwrap();
        let back = BenchmarkSet::load(dir.path()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.seed(), Some(9));
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("id, ground_truth, origin_label, target_label"));
    }

    #[test]
    fn saving_a_smaller_set_removes_stale_images() {
        let dir = tempfile::tempdir().unwrap();
        build_benchmark(&benign(3), &adversarials(6), 9).unwrap().save(dir.path()).unwrap();
        build_benchmark(&benign(2), &[], 9).unwrap().save(dir.path()).unwrap();
        let images = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "fsvi"))
            .count();
        assert_eq!(images, 2);
    }

    #[test]
    fn missing_image_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        build_benchmark(&benign(2), &adversarials(2), 1).unwrap().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("00002.fsvi")).unwrap();
        let err = BenchmarkSet::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::BenchmarkRecord { id: 2, .. }), "{err}");
    }

    #[test]
    fn corrupt_image_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        build_benchmark(&benign(2), &[], 1).unwrap().save(dir.path()).unwrap();
        fs::write(dir.path().join("00001.fsvi"), b"FSVI").unwrap();
        assert!(matches!(
            BenchmarkSet::load(dir.path()),
            Err(Error::BenchmarkRecord { id: 1, .. })
        ));
    }

    #[test]
    fn manifest_rejects_inconsistent_rows() {
        let p = Path::new("m");
        let base = format!("{MANIFEST_HEADER}\n");
        assert!(parse_manifest(&format!("{base}00000, benign, 0, 3\n"), p).is_err());
        assert!(parse_manifest(&format!("{base}00000, adversarial, 0, -\n"), p).is_err());
        assert!(parse_manifest(&format!("{base}00000, adversarial, 4, 4\n"), p).is_err());
        assert!(parse_manifest(&format!("{base}00001, benign, 0, -\n00000, benign, 0, -\n"), p).is_err());
        assert!(parse_manifest("00000, benign, 0, -\n", p).is_err());
        let (seed, rows) = parse_manifest(&format!("# seed = 12\n{base}00000, adversarial, 0, 9\n"), p).unwrap();
        assert_eq!(seed, Some(12));
        assert_eq!(rows[0].target, Some(Label::new(9).unwrap()));
    }
}
