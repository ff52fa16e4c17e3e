//! Labeled image corpora and the manifest file format.
//!
//! A manifest is UTF-8 JSON Lines. The first non-blank line is the header
//! `{"format":"mmod-manifest","version":1}`; each following non-blank line
//! describes one image:
//!
//! ```text
//! {"image":"img/0001.png","boxes":[[left,top,width,height],...]}
//! ```
//!
//! Image paths are relative to the manifest's directory unless absolute.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::GrayImage;
use crate::geom::{Labeling, OverlapRule, Rect};

pub const MANIFEST_FORMAT: &str = "mmod-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub path: String,
    pub image: GrayImage,
    pub truth: Labeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub boxes: Vec<[i64; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses manifest text; every malformed line is reported.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut errors = Vec::new();
        match lines.next() {
            None => return Ok(Self::default()),
            Some((n, line)) => match serde_json::from_str::<Header>(line) {
                Ok(h) if h.format == MANIFEST_FORMAT && h.version == MANIFEST_VERSION => {}
                Ok(h) => errors.push(format!(
                    "line {}: unsupported manifest {} v{}",
                    n + 1,
                    h.format,
                    h.version
                )),
                Err(e) => errors.push(format!("line {}: bad header: {e}", n + 1)),
            },
        }
        let mut entries = Vec::new();
        for (n, line) in lines {
            match serde_json::from_str::<ManifestEntry>(line) {
                Ok(e) => {
                    for b in &e.boxes {
                        if b[2] <= 0 || b[3] <= 0 {
                            errors.push(format!(
                                "line {}: box {:?} in {} has nonpositive dimensions",
                                n + 1,
                                b,
                                e.image
                            ));
                        }
                    }
                    entries.push(e);
                }
                Err(e) => errors.push(format!("line {}: {e}", n + 1)),
            }
        }
        if errors.is_empty() {
            Ok(Self { entries })
        } else {
            Err(Error::Dataset(errors))
        }
    }

    pub fn to_text(&self) -> String {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
        };
        let mut out = serde_json::to_string(&header).unwrap();
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Clips `b` to the image; `None` when clipping removes half or more of it.
fn clip_box(b: Rect, width: u32, height: u32) -> Option<Rect> {
    let bounds = Rect::new(0, 0, width as i64, height as i64);
    let clipped = b.intersect(&bounds)?;
    (2 * clipped.area() > b.area()).then_some(clipped)
}

fn resolve(base: &Path, image: &str) -> PathBuf {
    let p = Path::new(image);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every image of a manifest with its validated truth boxes, in
/// manifest order.
pub fn load_dataset(
    manifest_path: impl AsRef<Path>,
    rule: &OverlapRule,
) -> Result<Vec<LabeledImage>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let loaded: Vec<Result<LabeledImage, String>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let path = resolve(base, &entry.image);
            let image = GrayImage::load(&path).map_err(|e| format!("entry {}: {e}", i + 1))?;
            let mut rects = Vec::with_capacity(entry.boxes.len());
            for b in &entry.boxes {
                let r = Rect::try_new(b[0], b[1], b[2], b[3])
                    .map_err(|e| format!("entry {} ({}): {e}", i + 1, entry.image))?;
                let clipped = clip_box(r, image.width(), image.height()).ok_or_else(|| {
                    format!(
                        "entry {} ({}): box {:?} lies mostly outside the {}x{} image",
                        i + 1,
                        entry.image,
                        b,
                        image.width(),
                        image.height()
                    )
                })?;
                rects.push(clipped);
            }
            let truth = Labeling::new(rects, rule)
                .map_err(|e| format!("entry {} ({}): invalid labeling: {e}", i + 1, entry.image))?;
            Ok(LabeledImage {
                path: entry.image.clone(),
                image,
                truth,
            })
        })
        .collect();
    let mut errors = Vec::new();
    let mut out = Vec::new();
    for r in loaded {
        match r {
            Ok(li) => out.push(li),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Dataset(errors))
    }
}

/// Writes every image as PNG next to the manifest and the manifest itself.
/// `path` entries are used as relative file names.
pub fn save_dataset(dataset: &[LabeledImage], manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::default();
    for li in dataset {
        let target = resolve(base, &li.path);
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        li.image.save_png(&target)?;
        manifest.entries.push(ManifestEntry {
            image: li.path.clone(),
            boxes: li
                .truth
                .rects()
                .iter()
                .map(|r| [r.left, r.top, r.width, r.height])
                .collect(),
        });
    }
    manifest.save(manifest_path)
}

pub fn mirror_rect(r: &Rect, image_width: u32) -> Rect {
    Rect::new(
        image_width as i64 - r.left - r.width,
        r.top,
        r.width,
        r.height,
    )
}

pub fn mirror_image(li: &LabeledImage) -> LabeledImage {
    let w = li.image.width();
    LabeledImage {
        path: format!("{}#mirror", li.path),
        image: li.image.mirror_horizontal(),
        truth: Labeling::from_rects_unchecked(
            li.truth.rects().iter().map(|r| mirror_rect(r, w)).collect(),
        ),
    }
}

/// Appends a horizontally flipped copy of every image.
pub fn mirror_augment(dataset: Vec<LabeledImage>) -> Vec<LabeledImage> {
    let mirrored: Vec<LabeledImage> = dataset.iter().map(mirror_image).collect();
    let mut out = dataset;
    out.extend(mirrored);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labeled(w: u32, h: u32, rects: Vec<Rect>) -> LabeledImage {
        LabeledImage {
            path: "a.png".into(),
            image: GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 256) as f64),
            truth: Labeling::new(rects, &OverlapRule::default()).unwrap(),
        }
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_dataset(&path, &OverlapRule::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn loads_one_image_one_box() {
        let dir = tempfile::tempdir().unwrap();
        let li = labeled(30, 20, vec![Rect::new(2, 3, 10, 8)]);
        let path = dir.path().join("m.jsonl");
        save_dataset(std::slice::from_ref(&li), &path).unwrap();
        let back = load_dataset(&path, &OverlapRule::default()).unwrap();
        assert_eq!(back, vec![li]);
    }

    #[test]
    fn errors_are_aggregated_with_line_numbers() {
        let text = "{\"format\":\"mmod-manifest\",\"version\":1}\n\
                    {\"image\":\"a.png\",\"boxes\":[[0,0,0,5]]}\n\
                    not json\n";
        let err = Manifest::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        let bad_version = "{\"format\":\"mmod-manifest\",\"version\":9}\n";
        assert!(Manifest::parse(bad_version).is_err());
    }

    #[test]
    fn missing_image_and_overlapping_truth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::filled(40, 40, 0.0)
            .save_png(dir.path().join("ok.png"))
            .unwrap();
        let manifest = Manifest {
            entries: vec![
                ManifestEntry {
                    image: "missing.png".into(),
                    boxes: vec![],
                },
                ManifestEntry {
                    image: "ok.png".into(),
                    boxes: vec![[0, 0, 10, 10], [1, 0, 10, 10]],
                },
            ],
        };
        let path = dir.path().join("m.jsonl");
        manifest.save(&path).unwrap();
        let err = load_dataset(&path, &OverlapRule::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing.png"), "{err}");
        assert!(
            err.contains("ok.png") && err.contains("invalid labeling"),
            "{err}"
        );
    }

    #[test]
    fn boxes_clipped_or_rejected() {
        assert_eq!(
            clip_box(Rect::new(-2, 0, 10, 10), 20, 20),
            Some(Rect::new(0, 0, 8, 10))
        );
        assert_eq!(clip_box(Rect::new(-5, 0, 10, 10), 20, 20), None);
        assert_eq!(clip_box(Rect::new(50, 50, 10, 10), 20, 20), None);
    }

    #[test]
    fn mirror_examples() {
        let li = labeled(
            100,
            50,
            vec![Rect::new(40, 10, 20, 20), Rect::new(0, 5, 10, 12)],
        );
        let m = mirror_image(&li);
        assert_eq!(m.truth.rects()[0], Rect::new(40, 10, 20, 20));
        assert_eq!(m.truth.rects()[1], Rect::new(90, 5, 10, 12));
        let twice = mirror_image(&m);
        assert_eq!(twice.image, li.image);
        assert_eq!(twice.truth, li.truth);
        let aug = mirror_augment(vec![li.clone()]);
        assert_eq!(aug.len(), 2);
        assert_eq!(aug[0], li);
    }

    proptest! {
        #[test]
        fn manifest_text_round_trip(entries in proptest::collection::vec(
            ("[a-z]{1,8}\\.png", proptest::collection::vec((-50i64..500, -50i64..500, 1i64..200, 1i64..200), 0..4)),
            0..6)) {
            let m = Manifest {
                entries: entries.into_iter().map(|(image, boxes)| ManifestEntry {
                    image,
                    boxes: boxes.into_iter().map(|(l, t, w, h)| [l, t, w, h]).collect(),
                }).collect(),
            };
            prop_assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        }

        #[test]
        fn mirroring_preserves_areas(l in 0i64..80, t in 0i64..40, w in 1i64..20, h in 1i64..10) {
            let r = Rect::new(l, t, w, h);
            let m = mirror_rect(&r, 100);
            prop_assert_eq!(m.area(), r.area());
            prop_assert_eq!(mirror_rect(&m, 100), r);
        }
    }
}
