use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_sketch_with, rasterize, GenConfig, NoiseConfig, RasterImage};
use crate::error::{Error, Result};
use crate::sketch::Sketch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: u64,
    pub image_png_b64: String,
    pub sketch: Sketch,
}

impl CorpusRecord {
    pub fn image(&self) -> Result<RasterImage> {
        RasterImage::from_png_base64(&self.image_png_b64)
    }
}

/// Per-type counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub sketches: usize,
    pub primitives: BTreeMap<String, usize>,
    pub constraints: BTreeMap<String, usize>,
}

impl CorpusSummary {
    fn add(&mut self, s: &Sketch) {
        self.sketches += 1;
        for p in &s.primitives {
            *self.primitives.entry(p.ptype.name().to_string()).or_default() += 1;
        }
        for c in &s.constraints {
            *self.constraints.entry(c.ctype.name().to_string()).or_default() += 1;
        }
    }
}

/// Independent per-record (or per-epoch) seed; splitmix64 over the pair.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n` sketches from `cfg.seed`, renders them, and writes a corpus file.
///
/// Record `i` depends only on `(cfg.seed, i)`, so the output is byte-identical
/// for identical inputs regardless of how it is produced.
pub fn build_corpus(path: &Path, n: usize, cfg: &GenConfig, noise: Option<&NoiseConfig>) -> Result<CorpusSummary> {
    cfg.validate()?;
    if let Some(noise) = noise {
        noise.validate()?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut summary = CorpusSummary::default();
    for i in 0..n as u64 {
        let record = make_record(i, cfg, noise)?;
        summary.add(&record.sketch);
        serde_json::to_writer(&mut out, &record).expect("record serialization");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

/// One corpus record, without touching the file system.
pub fn make_record(id: u64, cfg: &GenConfig, noise: Option<&NoiseConfig>) -> Result<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id));
    let sketch = generate_sketch_with(cfg, &mut rng)?;
    let image = rasterize(&sketch.primitives, noise, &mut rng);
    Ok(CorpusRecord {
        id,
        image_png_b64: image.to_png_base64(),
        sketch,
    })
}

/// A corpus file loaded into memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub path: PathBuf,
    pub records: Vec<CorpusRecord>,
}

impl Corpus {
    /// Reads and validates every record; errors name the offending line.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| Error::Corpus {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let mut record: CorpusRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            record.sketch.constraints = record.sketch.constraints.into_iter().map(|c| c.canonical()).collect();
            record
                .sketch
                .validate()
                .map_err(|v| corrupt(format!("invalid sketch: {}", v[0])))?;
            records.push(record);
        }
        Ok(Self {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> CorpusSummary {
        let mut s = CorpusSummary::default();
        for r in &self.records {
            s.add(&r.sketch);
        }
        s
    }

    pub fn max_primitives(&self) -> usize {
        self.records.iter().map(|r| r.sketch.primitives.len()).max().unwrap_or(0)
    }

    /// Record order for `epoch`; a fresh shuffle per epoch derived from `seed`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
        order
    }

    /// Decoded `(image, sketch)` batches in `epoch_order(seed, epoch)`.
    pub fn iterate(
        &self,
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> impl Iterator<Item = Result<Vec<(RasterImage, Sketch)>>> + '_ {
        let order = self.epoch_order(seed, epoch);
        let batch_size = batch_size.max(1);
        let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        batches.into_iter().map(move |batch| {
            batch
                .into_iter()
                .map(|i| {
                    let r = &self.records[i];
                    let image = r.image().map_err(|e| Error::Corpus {
                        path: self.path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    Ok((image, r.sketch.clone()))
                })
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cfg = GenConfig {
            seed,
            ..GenConfig::default()
        };
        build_corpus(&path, n, &cfg, Some(&NoiseConfig::default())).unwrap();
        (dir, path)
    }

    #[test]
    fn build_then_iterate_preserves_count() {
        let (_d, path) = small(10, 1);
        let c = Corpus::open(&path).unwrap();
        let n: usize = c.iterate(3, 0, 0).map(|b| b.unwrap().len()).sum();
        assert_eq!(n, 10);
    }

    #[test]
    fn iteration_order_is_seeded() {
        let (_d, path) = small(10, 1);
        let c = Corpus::open(&path).unwrap();
        assert_eq!(c.epoch_order(5, 0), c.epoch_order(5, 0));
        assert_ne!(c.epoch_order(5, 0), c.epoch_order(5, 1));
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        let (_a, p) = small(5, 9);
        let (_b, q) = small(5, 9);
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
    }

    #[test]
    fn corrupt_line_is_named() {
        let (_d, path) = small(4, 2);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{\"id\": 2, \"image_png_b64\": ";
        std::fs::write(&path, lines.join("\n")).unwrap();
        match Corpus::open(&path) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = Corpus::open(Path::new("/nonexistent/corpus.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.jsonl"));
    }
}
