//! Poison sets: sorted index sets of size M plus selection provenance.
//!
//! Wire format: a text file with one zero-based decimal index per line in
//! ascending order, plus a JSON sidecar `{method, budget_m, seed, anchor,
//! k, cluster_id}` next to it (same stem, `.json` extension).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance tag for how a poison set was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Random,
    Clustering,
    Contrastive,
    PositiveOnly,
    NegativeOnly,
    Infonce,
    Oracle,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SelectionMethod::Random => "random",
            SelectionMethod::Clustering => "clustering",
            SelectionMethod::Contrastive => "contrastive",
            SelectionMethod::PositiveOnly => "positive_only",
            SelectionMethod::NegativeOnly => "negative_only",
            SelectionMethod::Infonce => "infonce",
            SelectionMethod::Oracle => "oracle",
        };
        write!(f, "{s}")
    }
}

/// Sorted, duplicate-free sample indices chosen for poisoning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoisonSet {
    indices: Vec<usize>,
    budget_m: usize,
    method: SelectionMethod,
    seed: Option<u64>,
    anchor: Option<usize>,
    k: Option<usize>,
    cluster_id: Option<usize>,
}

/// Sidecar record stored next to the index file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonSidecar {
    pub method: SelectionMethod,
    pub budget_m: usize,
    pub seed: Option<u64>,
    pub anchor: Option<usize>,
    pub k: Option<usize>,
    pub cluster_id: Option<usize>,
}

impl PoisonSet {
    /// Build a poison set; `indices` must be strictly increasing.
    /// The budget equals the index count by construction.
    pub fn new(indices: Vec<usize>, method: SelectionMethod) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidInput(format!(
                    "poison indices must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(PoisonSet {
            budget_m: indices.len(),
            indices,
            method,
            seed: None,
            anchor: None,
            k: None,
            cluster_id: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_anchor(mut self, anchor: usize) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn with_cluster(mut self, k: usize, cluster_id: usize) -> Self {
        self.k = Some(k);
        self.cluster_id = Some(cluster_id);
        self
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn budget_m(&self) -> usize {
        self.budget_m
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn method(&self) -> SelectionMethod {
        self.method
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn anchor(&self) -> Option<usize> {
        self.anchor
    }

    pub fn cluster(&self) -> (Option<usize>, Option<usize>) {
        (self.k, self.cluster_id)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Check that every index addresses one of `n` samples.
    pub fn validate_against(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        Ok(())
    }

    pub fn sidecar(&self) -> PoisonSidecar {
        PoisonSidecar {
            method: self.method,
            budget_m: self.budget_m,
            seed: self.seed,
            anchor: self.anchor,
            k: self.k,
            cluster_id: self.cluster_id,
        }
    }

    fn sidecar_path(indices_path: &Path) -> PathBuf {
        indices_path.with_extension("json")
    }

    /// Write the index file and its JSON sidecar.
    pub fn save(&self, indices_path: &Path) -> Result<()> {
        let mut text = String::new();
        for i in &self.indices {
            text.push_str(&i.to_string());
            text.push('\n');
        }
        fs::write(indices_path, text).map_err(|e| Error::io(indices_path, e))?;
        let sidecar_path = Self::sidecar_path(indices_path);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(&sidecar_path, json + "\n").map_err(|e| Error::io(&sidecar_path, e))
    }

    /// Read an index file (and its sidecar when present).
    ///
    /// A bare index file without a sidecar loads with `random` provenance;
    /// the method tag only matters for reporting.
    pub fn load(indices_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(indices_path).map_err(|e| Error::io(indices_path, e))?;
        let mut indices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let idx: usize = line.parse().map_err(|_| {
                Error::parse(
                    indices_path,
                    format!("bad index {line:?} at line {}", lineno + 1),
                )
            })?;
            indices.push(idx);
        }
        let mut set = PoisonSet::new(indices, SelectionMethod::Random).map_err(|e| {
            Error::parse(indices_path, format!("invalid index sequence: {e}"))
        })?;

        let sidecar_path = Self::sidecar_path(indices_path);
        if sidecar_path.exists() {
            let json = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
            let sc: PoisonSidecar = serde_json::from_str(&json)?;
            if sc.budget_m != set.len() {
                return Err(Error::parse(
                    &sidecar_path,
                    format!(
                        "sidecar budget_m={} disagrees with {} indices",
                        sc.budget_m,
                        set.len()
                    ),
                ));
            }
            set.method = sc.method;
            set.seed = sc.seed;
            set.anchor = sc.anchor;
            set.k = sc.k;
            set.cluster_id = sc.cluster_id;
        }
        Ok(set)
    }
}
