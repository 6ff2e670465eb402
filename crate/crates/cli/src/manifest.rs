//! Pair manifests: CSV with header `pred,gt,tag`. Relative paths resolve
//! against the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use depthloss::{load_depth, DepthFormat, DepthMap, EvalPair};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 3] = ["pred", "gt", "tag"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[serde(default)]
    pub tag: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    base: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening manifest {}", path.display()))?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != HEADER {
            bail!(
                "manifest {} must have header pred,gt,tag, found {:?}",
                path.display(),
                headers
            );
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize().enumerate() {
            let row: ManifestRow = rec.with_context(|| format!("manifest row {}", i + 1))?;
            rows.push(row);
        }
        if rows.is_empty() {
            bail!("manifest {} lists no pairs", path.display());
        }
        Ok(Self {
            rows,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Loads every pair in parallel, keeping per-row failures.
    pub fn load_pairs(&self, depth_cap: f64) -> Vec<Result<(DepthMap, DepthMap)>> {
        self.rows
            .par_iter()
            .map(|row| {
                let pred = load_map(&self.resolve(&row.pred), depth_cap)?;
                let gt = load_map(&self.resolve(&row.gt), depth_cap)?;
                EvalPair::new(&pred, &gt)?;
                Ok((pred, gt))
            })
            .collect()
    }
}

pub fn load_map(path: &Path, depth_cap: f64) -> Result<DepthMap> {
    let format = DepthFormat::from_path(path)
        .with_context(|| format!("{}: unknown extension (expected pgm, pfm or csv)", path.display()))?;
    Ok(load_depth(path, format, depth_cap)?)
}

pub fn write(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record([
            row.pred.to_string_lossy().as_ref(),
            row.gt.to_string_lossy().as_ref(),
            &row.tag,
        ])?;
    }
    w.flush()?;
    Ok(())
}
