//! On-disk synthetic corpus and proposal records.
//!
//! ```text
//! corpus/
//!   manifest.json
//!   annotations.jsonl          one record per image
//!   images/000000.png
//!   backgrounds/<pool>/0000.png  paste backgrounds, disjoint from image backgrounds
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use codo_core::cpj::{BackgroundPool, PoolRole};
use codo_core::proposals::{filter_aspect_ratio, generate_proposals, select_one, ProposalGeneratorConfig};
use codo_core::rng::stream;
use codo_core::synth::{render_background, render_image, Split, SyntheticCorpusConfig, GLYPH_NAMES, POOL_ROLES};
use codo_core::{BoundingBox, Error as CoreError, Image};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};
use crate::imageio::{read_png, write_png};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub pool_id: u32,
    pub role: String,
    pub dir: String,
    pub n_backgrounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_images: usize,
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub pools: Vec<PoolEntry>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub file: String,
    pub class_id: usize,
    pub foreground_id: u64,
    pub pool_id: u32,
    pub background_index: usize,
    pub bbox: [f64; 4],
    pub split: String,
}

impl AnnotationRecord {
    pub fn bbox(&self) -> codo_core::Result<BoundingBox> {
        BoundingBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }

    pub fn is_test(&self) -> bool {
        self.split == Split::Test.as_str()
    }
}

fn pool_dir(role: PoolRole) -> String {
    format!("backgrounds/{}", role.as_str())
}

/// Renders the whole corpus into `out`.
pub fn generate_corpus(cfg: &SyntheticCorpusConfig, config_hash: &str, out: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    fs::create_dir_all(out.join("images")).at(out)?;
    let ann_path = out.join("annotations.jsonl");
    let mut ann = BufWriter::new(fs::File::create(&ann_path).at(&ann_path)?);
    let (mut n_train, mut n_test) = (0, 0);
    for i in 0..cfg.n_images as u64 {
        let (img, a) = render_image(cfg, i)?;
        let file = format!("images/{i:06}.png");
        write_png(&out.join(&file), &img)?;
        match a.split {
            Split::Train => n_train += 1,
            Split::Test => n_test += 1,
        }
        let rec = AnnotationRecord {
            image_id: a.image_id,
            file,
            class_id: a.class_id,
            foreground_id: a.foreground_id,
            pool_id: a.pool_id,
            background_index: a.background_index,
            bbox: a.bbox.to_array(),
            split: a.split.as_str().into(),
        };
        writeln!(ann, "{}", serde_json::to_string(&rec).expect("record serialises")).at(&ann_path)?;
    }
    ann.flush().at(&ann_path)?;
    let mut pools = Vec::new();
    for (pool_id, role) in POOL_ROLES.iter().enumerate() {
        let dir = pool_dir(*role);
        fs::create_dir_all(out.join(&dir)).at(out.join(&dir))?;
        for j in 0..cfg.backgrounds_per_pool {
            // indices past the image backgrounds keep the two sets disjoint
            let img = render_background(*role, cfg.image_size, cfg.seed, cfg.backgrounds_per_pool + j);
            write_png(&out.join(&dir).join(format!("{j:04}.png")), &img)?;
        }
        pools.push(PoolEntry { pool_id: pool_id as u32, role: role.as_str().into(), dir, n_backgrounds: cfg.backgrounds_per_pool });
    }
    let manifest = CorpusManifest {
        format_version: CORPUS_FORMAT_VERSION,
        config_hash: config_hash.into(),
        seed: cfg.seed,
        n_images: cfg.n_images,
        image_size: cfg.image_size,
        class_names: GLYPH_NAMES[..cfg.n_foreground_classes].iter().map(|s| s.to_string()).collect(),
        pools,
        n_train,
        n_test,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serialises");
    fs::write(path, text + "\n").at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub annotations: Vec<AnnotationRecord>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format_version != CORPUS_FORMAT_VERSION {
            return Err(CliError::format(
                dir.join("manifest.json"),
                format!("corpus format version {} is not supported", manifest.format_version),
            ));
        }
        let annotations: Vec<AnnotationRecord> = read_jsonl(&dir.join("annotations.jsonl"))?;
        if annotations.len() != manifest.n_images {
            return Err(CliError::format(dir, "annotation count does not match the manifest"));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, annotations })
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn image(&self, rec: &AnnotationRecord) -> Result<Image> {
        read_png(&self.dir.join(&rec.file))
    }

    pub fn image_by_id(&self, id: u64) -> Result<Image> {
        let rec = self
            .annotations
            .get(id as usize)
            .filter(|r| r.image_id == id)
            .ok_or_else(|| CliError::format(&self.dir, format!("image {id} is not in the corpus")))?;
        self.image(rec)
    }

    pub fn pool(&self, role: PoolRole) -> Result<BackgroundPool> {
        let entry = self
            .manifest
            .pools
            .iter()
            .find(|p| p.role == role.as_str())
            .ok_or_else(|| CliError::validation(format!("corpus has no pool `{}`", role.as_str())))?;
        let images = (0..entry.n_backgrounds)
            .map(|j| read_png(&self.dir.join(&entry.dir).join(format!("{j:04}.png"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackgroundPool::new(entry.pool_id, role, images)?)
    }

    pub fn pools(&self, roles: &[PoolRole]) -> Result<Vec<BackgroundPool>> {
        roles.iter().map(|r| self.pool(*r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalHeader {
    pub corpus: String,
    pub strategy: String,
    pub seed: u64,
    pub config_hash: String,
    pub n_images: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// One selected proposal per training image; images without a valid
/// proposal are skipped and counted.
pub fn select_proposals(
    corpus: &Corpus,
    cfg: &ProposalGeneratorConfig,
    seed: u64,
) -> Result<(Vec<ProposalRecord>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for rec in corpus.annotations.iter().filter(|r| !r.is_test()) {
        let img = corpus.image(rec)?;
        let mut rng = stream(seed ^ rec.image_id, 0x5052_4f50);
        let props = filter_aspect_ratio(generate_proposals(&img, rec.image_id, cfg, &mut rng)?);
        match select_one(&props, &mut rng) {
            Ok(p) => out.push(ProposalRecord { image_id: rec.image_id, bbox: p.bbox.to_array(), score: p.score }),
            Err(CoreError::NoProposal) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out, skipped))
}

pub fn write_proposals(path: &Path, header: &ProposalHeader, records: &[ProposalRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).at(path)?);
    writeln!(w, "{}", serde_json::to_string(header).expect("header serialises")).at(path)?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serialises")).at(path)?;
    }
    w.flush().at(path)
}

pub fn read_proposals(path: &Path) -> Result<(ProposalHeader, Vec<ProposalRecord>)> {
    let file = fs::File::open(path).at(path)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| CliError::format(path, "empty proposals file"))?.at(path)?;
    let header: ProposalHeader =
        serde_json::from_str(&first).map_err(|e| CliError::format(path, format!("header: {e}")))?;
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| CliError::format(path, format!("line {}: {e}", n + 2)))?);
    }
    Ok((header, records))
}
