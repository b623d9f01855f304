//! Implicit-feedback interaction matrices: ingestion, k-core filtering,
//! strong/weak generalization splits and synthetic noise injection.
//!
//! Every matrix is binary. Rows are users, columns are items, and each row
//! stores its item indices sorted and without duplicates.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LareError, Result};

const LAREX_MAGIC: &str = "LAREX";

/// Sparse binary user-item matrix with its degree profiles and id maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    user_degrees: Vec<u32>,
    item_degrees: Vec<u32>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl InteractionMatrix {
    /// Builds a matrix from per-user item lists. Duplicates are collapsed.
    pub fn from_rows(rows: Vec<Vec<u32>>, cols: usize) -> Result<Self> {
        let m = rows.len();
        let mut indptr = Vec::with_capacity(m + 1);
        let mut indices = Vec::new();
        let mut item_degrees = vec![0u32; cols];
        let mut user_degrees = Vec::with_capacity(m);
        indptr.push(0);
        for (u, mut items) in rows.into_iter().enumerate() {
            items.sort_unstable();
            items.dedup();
            if let Some(&last) = items.last() {
                if last as usize >= cols {
                    return Err(LareError::Input(format!(
                        "user {u} references item {last} but the matrix has {cols} columns"
                    )));
                }
            }
            for &i in &items {
                item_degrees[i as usize] += 1;
            }
            user_degrees.push(items.len() as u32);
            indices.extend_from_slice(&items);
            indptr.push(indices.len());
        }
        Ok(InteractionMatrix {
            rows: m,
            cols,
            indptr,
            indices,
            user_degrees,
            item_degrees,
            user_ids: (0..m).map(|u| u.to_string()).collect(),
            item_ids: (0..cols).map(|i| i.to_string()).collect(),
        })
    }

    /// Builds a matrix from (user, item) pairs.
    pub fn from_pairs(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut lists = vec![Vec::new(); rows];
        for (u, i) in pairs {
            let list = lists.get_mut(u as usize).ok_or_else(|| {
                LareError::Input(format!("user index {u} out of range for {rows} rows"))
            })?;
            list.push(i);
        }
        Self::from_rows(lists, cols)
    }

    /// Builds a matrix from a dense 0/1 table; handy for small fixtures.
    pub fn from_dense(table: &[&[u8]]) -> Result<Self> {
        let cols = table.first().map_or(0, |r| r.len());
        let rows = table
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        Self::from_rows(rows, cols)
    }

    pub fn with_ids(mut self, user_ids: Vec<String>, item_ids: Vec<String>) -> Result<Self> {
        if user_ids.len() != self.rows || item_ids.len() != self.cols {
            return Err(LareError::Input(format!(
                "id maps of size {}x{} do not match a {}x{} matrix",
                user_ids.len(),
                item_ids.len(),
                self.rows,
                self.cols
            )));
        }
        self.user_ids = user_ids;
        self.item_ids = item_ids;
        Ok(self)
    }

    pub fn n_users(&self) -> usize {
        self.rows
    }

    pub fn n_items(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
    }

    /// Sorted item indices of user `u`.
    pub fn row(&self, u: usize) -> &[u32] {
        &self.indices[self.indptr[u]..self.indptr[u + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.rows).map(move |u| self.row(u))
    }

    pub fn user_degrees(&self) -> &[u32] {
        &self.user_degrees
    }

    pub fn item_degrees(&self) -> &[u32] {
        &self.item_degrees
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn contains(&self, u: usize, i: u32) -> bool {
        self.row(u).binary_search(&i).is_ok()
    }

    /// All stored (user, item) pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.rows).flat_map(move |u| self.row(u).iter().map(move |&i| (u as u32, i)))
    }

    /// Item-major view: for each item, the sorted list of its users.
    pub fn columns(&self) -> Vec<Vec<u32>> {
        let mut cols: Vec<Vec<u32>> = self
            .item_degrees
            .iter()
            .map(|&d| Vec::with_capacity(d as usize))
            .collect();
        for (u, i) in self.pairs() {
            cols[i as usize].push(u);
        }
        cols
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (u, i) in self.pairs() {
            out[u as usize][i as usize] = 1.0;
        }
        out
    }

    /// SHA-256 over the canonical text form; identifies a dataset in manifests.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(format!("{} {} {} {}\n", LAREX_MAGIC, self.rows, self.cols, self.nnz()));
        for &p in &self.indptr {
            h.update((p as u64).to_le_bytes());
        }
        for &i in &self.indices {
            h.update(i.to_le_bytes());
        }
        for id in self.user_ids.iter().chain(self.item_ids.iter()) {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Keeps the listed users (in the given order) and the items flagged in
    /// `keep_items`, re-compacting both index spaces.
    fn restrict(&self, users: &[usize], keep_items: &[bool]) -> Result<Self> {
        let mut remap = vec![u32::MAX; self.cols];
        let mut item_ids = Vec::new();
        for (i, &keep) in keep_items.iter().enumerate() {
            if keep {
                remap[i] = item_ids.len() as u32;
                item_ids.push(self.item_ids[i].clone());
            }
        }
        let rows = users
            .iter()
            .map(|&u| {
                self.row(u)
                    .iter()
                    .filter_map(|&i| {
                        let j = remap[i as usize];
                        (j != u32::MAX).then_some(j)
                    })
                    .collect()
            })
            .collect();
        let user_ids = users.iter().map(|&u| self.user_ids[u].clone()).collect();
        Self::from_rows(rows, item_ids.len())?.with_ids(user_ids, item_ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| LareError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| LareError::io(path, e);
        writeln!(w, "{} {} {} {}", LAREX_MAGIC, self.rows, self.cols, self.nnz()).map_err(io)?;
        for (u, i) in self.pairs() {
            writeln!(w, "{u} {i}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Writes the matrix plus `<stem>.users.tsv` / `<stem>.items.tsv` id maps.
    pub fn save_with_ids(&self, dir: &Path, stem: &str) -> Result<()> {
        self.save(&dir.join(format!("{stem}.larex")))?;
        write_id_map(&dir.join(format!("{stem}.users.tsv")), &self.user_ids)?;
        write_id_map(&dir.join(format!("{stem}.items.tsv")), &self.item_ids)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| LareError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| LareError::io(path, e))?,
            None => return Err(LareError::format(path, "missing header")),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != LAREX_MAGIC {
            return Err(LareError::format(path, "expected header `LAREX m n nnz`"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| LareError::format(path, format!("bad header field `{s}`")))
        };
        let (m, n, nnz) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        let mut pairs = Vec::with_capacity(nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| LareError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(u), Some(i), None) = (it.next(), it.next(), it.next()) else {
                return Err(LareError::Parse {
                    path: path.into(),
                    line: lineno + 2,
                    msg: "expected `user item`".into(),
                });
            };
            let u: u32 = u.parse().map_err(|_| LareError::Parse {
                path: path.into(),
                line: lineno + 2,
                msg: format!("bad user index `{u}`"),
            })?;
            let i: u32 = i.parse().map_err(|_| LareError::Parse {
                path: path.into(),
                line: lineno + 2,
                msg: format!("bad item index `{i}`"),
            })?;
            if u as usize >= m || i as usize >= n {
                return Err(LareError::Parse {
                    path: path.into(),
                    line: lineno + 2,
                    msg: format!("entry ({u}, {i}) outside a {m}x{n} matrix"),
                });
            }
            pairs.push((u, i));
        }
        if pairs.len() != nnz {
            return Err(LareError::format(
                path,
                format!("header promises {nnz} entries, found {}", pairs.len()),
            ));
        }
        let x = Self::from_pairs(m, n, pairs)?;
        if x.nnz() != nnz {
            return Err(LareError::format(path, "duplicate entries"));
        }
        Ok(x)
    }

    pub fn load_with_ids(dir: &Path, stem: &str) -> Result<Self> {
        let x = Self::load(&dir.join(format!("{stem}.larex")))?;
        let users = read_id_map(&dir.join(format!("{stem}.users.tsv")))?;
        let items = read_id_map(&dir.join(format!("{stem}.items.tsv")))?;
        x.with_ids(users, items)
    }
}

fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LareError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (idx, id) in ids.iter().enumerate() {
        writeln!(w, "{id}\t{idx}").map_err(|e| LareError::io(path, e))?;
    }
    w.flush().map_err(|e| LareError::io(path, e))
}

fn read_id_map(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| LareError::io(path, e))?;
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let (id, idx) = line.rsplit_once('\t').ok_or_else(|| LareError::Parse {
            path: path.into(),
            line: lineno + 1,
            msg: "expected `id<TAB>index`".into(),
        })?;
        if idx.parse::<usize>().ok() != Some(ids.len()) {
            return Err(LareError::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("index `{idx}` is not contiguous"),
            });
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// Whitespace separated (tabs or spaces).
    Tsv,
    Csv,
}

impl FromStr for InputFormat {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" | "tab" | "txt" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            other => Err(LareError::Config(format!("unknown input format `{other}`"))),
        }
    }
}

fn looks_like_header(fields: &[&str]) -> bool {
    const NAMES: [&str; 6] = ["user", "item", "rating", "timestamp", "movie", "time"];
    let named = fields.iter().any(|f| {
        let f = f.trim().to_ascii_lowercase();
        NAMES.iter().any(|n| f.starts_with(n))
    });
    named || fields.get(2).is_some_and(|r| r.trim().parse::<f64>().is_err())
}

/// Reads an event log of `user,item[,rating[,timestamp]]` records into a
/// binary matrix. Indices are assigned in order of first appearance.
pub fn ingest(path: &Path, format: InputFormat, threshold: Option<f64>) -> Result<InteractionMatrix> {
    let records = read_records(path, format)?;
    let mut users: HashMap<String, u32> = HashMap::new();
    let mut items: HashMap<String, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut pairs = Vec::new();
    let mut first = true;
    for (lineno, fields) in records {
        if first {
            first = false;
            let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
            if looks_like_header(&refs) {
                continue;
            }
        }
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(LareError::Parse {
                path: path.into(),
                line: lineno,
                msg: "expected at least `user item`".into(),
            });
        }
        let rating = match fields.get(2) {
            Some(r) => Some(r.trim().parse::<f64>().map_err(|_| LareError::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("bad rating `{r}`"),
            })?),
            None => None,
        };
        if let Some(t) = threshold {
            match rating {
                Some(r) if r >= t => {}
                Some(_) => continue,
                None => {
                    return Err(LareError::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: "a rating threshold was given but the record has no rating".into(),
                    })
                }
            }
        }
        let u = *users.entry(fields[0].clone()).or_insert_with(|| {
            user_ids.push(fields[0].clone());
            (user_ids.len() - 1) as u32
        });
        let i = *items.entry(fields[1].clone()).or_insert_with(|| {
            item_ids.push(fields[1].clone());
            (item_ids.len() - 1) as u32
        });
        pairs.push((u, i));
    }
    if pairs.is_empty() {
        return Err(LareError::EmptyDataset(format!(
            "{} contains no usable records",
            path.display()
        )));
    }
    InteractionMatrix::from_pairs(user_ids.len(), item_ids.len(), pairs)?.with_ids(user_ids, item_ids)
}

fn read_records(path: &Path, format: InputFormat) -> Result<Vec<(usize, Vec<String>)>> {
    let mut out = Vec::new();
    match format {
        InputFormat::Tsv => {
            let file = fs::File::open(path).map_err(|e| LareError::io(path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| LareError::io(path, e))?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                out.push((n + 1, line.split_whitespace().map(str::to_string).collect()));
            }
        }
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(io) => LareError::io(path, io),
                    other => LareError::format(path, format!("{other:?}")),
                })?;
            for rec in reader.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    LareError::Parse {
                        path: path.into(),
                        line,
                        msg: e.to_string(),
                    }
                })?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                out.push((line, rec.iter().map(str::to_string).collect()));
            }
        }
    }
    Ok(out)
}

/// Iteratively drops users with fewer than `k_user` and items with fewer
/// than `k_item` interactions until every survivor meets its threshold.
pub fn k_core(x: &InteractionMatrix, k_user: usize, k_item: usize) -> Result<InteractionMatrix> {
    if k_user == 0 || k_item == 0 {
        return Err(LareError::Config("k-core thresholds must be at least 1".into()));
    }
    let mut user_alive = vec![true; x.n_users()];
    let mut item_alive = vec![true; x.n_items()];
    let mut udeg: Vec<usize> = x.user_degrees().iter().map(|&d| d as usize).collect();
    let mut ideg: Vec<usize> = x.item_degrees().iter().map(|&d| d as usize).collect();
    let cols = x.columns();
    loop {
        let dead_users: Vec<usize> = (0..x.n_users())
            .filter(|&u| user_alive[u] && udeg[u] < k_user)
            .collect();
        let dead_items: Vec<usize> = (0..x.n_items())
            .filter(|&i| item_alive[i] && ideg[i] < k_item)
            .collect();
        if dead_users.is_empty() && dead_items.is_empty() {
            break;
        }
        for &u in &dead_users {
            user_alive[u] = false;
        }
        for &i in &dead_items {
            item_alive[i] = false;
        }
        for &u in &dead_users {
            for &i in x.row(u) {
                if item_alive[i as usize] || dead_items.contains(&(i as usize)) {
                    ideg[i as usize] = ideg[i as usize].saturating_sub(1);
                }
            }
        }
        for &i in &dead_items {
            for &u in &cols[i] {
                if user_alive[u as usize] {
                    udeg[u as usize] -= 1;
                }
            }
        }
    }
    let users: Vec<usize> = (0..x.n_users()).filter(|&u| user_alive[u]).collect();
    let out = x.restrict(&users, &item_alive)?;
    if out.nnz() == 0 {
        return Err(LareError::EmptyAfterFilter { k_user, k_item });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Evaluation users are disjoint from training users.
    Strong,
    /// Evaluation uses held-out interactions of training users.
    Weak,
}

impl FromStr for Protocol {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strong" => Ok(Protocol::Strong),
            "weak" => Ok(Protocol::Weak),
            other => Err(LareError::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Strong => "strong",
            Protocol::Weak => "weak",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub protocol: Protocol,
    /// (train, validation, test) or (train, test).
    pub ratios: Vec<f64>,
    pub foldin_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn strong(seed: u64) -> Self {
        SplitConfig {
            protocol: Protocol::Strong,
            ratios: vec![0.8, 0.1, 0.1],
            foldin_fraction: 0.8,
            seed,
        }
    }

    pub fn weak(seed: u64) -> Self {
        SplitConfig {
            protocol: Protocol::Weak,
            ratios: vec![0.8, 0.2],
            foldin_fraction: 0.8,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.ratios.len()) {
            return Err(LareError::Config("split ratios need 2 or 3 entries".into()));
        }
        if self.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(LareError::Config("split ratios must lie in [0, 1]".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LareError::Config(format!("split ratios sum to {sum}, not 1")));
        }
        if !(self.foldin_fraction > 0.0 && self.foldin_fraction < 1.0) {
            return Err(LareError::Config("fold-in fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Fold-in and held-out interactions for a set of evaluation users, both
/// expressed in the training item space. Row `k` of each matrix is the same
/// user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub foldin: InteractionMatrix,
    pub heldout: InteractionMatrix,
}

impl EvalSet {
    pub fn n_users(&self) -> usize {
        self.foldin.n_users()
    }

    pub fn user_ids(&self) -> &[String] {
        self.foldin.user_ids()
    }

    fn from_lists(
        user_ids: Vec<String>,
        foldin: Vec<Vec<u32>>,
        heldout: Vec<Vec<u32>>,
        item_ids: &[String],
    ) -> Result<Self> {
        let n = item_ids.len();
        Ok(EvalSet {
            foldin: InteractionMatrix::from_rows(foldin, n)?
                .with_ids(user_ids.clone(), item_ids.to_vec())?,
            heldout: InteractionMatrix::from_rows(heldout, n)?
                .with_ids(user_ids, item_ids.to_vec())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBundle {
    pub train: InteractionMatrix,
    pub validation: Option<EvalSet>,
    pub test: EvalSet,
    pub protocol: Protocol,
    pub seed: u64,
}

impl SplitBundle {
    /// Writes every split as LAREX matrices with id-map sidecars.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LareError::io(dir, e))?;
        self.train.save_with_ids(dir, "train")?;
        let mut sets = vec![("test", &self.test)];
        if let Some(v) = &self.validation {
            sets.push(("validation", v));
        }
        for (name, set) in sets {
            set.foldin.save(&dir.join(format!("{name}.foldin.larex")))?;
            set.heldout.save(&dir.join(format!("{name}.heldout.larex")))?;
            write_id_map(&dir.join(format!("{name}.users.tsv")), set.user_ids())?;
        }
        let meta = dir.join("split.tsv");
        let text = format!(
            "protocol\t{}\nseed\t{}\nvalidation\t{}\n",
            self.protocol,
            self.seed,
            self.validation.is_some()
        );
        fs::write(&meta, text).map_err(|e| LareError::io(&meta, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("split.tsv");
        let meta = fs::read_to_string(&meta_path).map_err(|e| LareError::io(&meta_path, e))?;
        let kv: HashMap<&str, &str> = meta.lines().filter_map(|l| l.split_once('\t')).collect();
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| LareError::format(&meta_path, format!("missing key `{k}`")))
        };
        let protocol: Protocol = get("protocol")?.parse()?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| LareError::format(&meta_path, "bad seed"))?;
        let has_validation = get("validation")? == "true";
        let train = InteractionMatrix::load_with_ids(dir, "train")?;
        let load_set = |name: &str| -> Result<EvalSet> {
            let users = read_id_map(&dir.join(format!("{name}.users.tsv")))?;
            let items = train.item_ids().to_vec();
            Ok(EvalSet {
                foldin: InteractionMatrix::load(&dir.join(format!("{name}.foldin.larex")))?
                    .with_ids(users.clone(), items.clone())?,
                heldout: InteractionMatrix::load(&dir.join(format!("{name}.heldout.larex")))?
                    .with_ids(users, items)?,
            })
        };
        let validation = if has_validation {
            Some(load_set("validation")?)
        } else {
            None
        };
        let test = load_set("test")?;
        Ok(SplitBundle {
            train,
            validation,
            test,
            protocol,
            seed,
        })
    }
}

/// Number of fold-in items for a user with `d >= 2` interactions: the
/// ceiling of `fraction * d`, leaving at least one held-out item.
pub fn foldin_count(d: usize, fraction: f64) -> usize {
    let c = ((d as f64) * fraction - 1e-9).ceil() as usize;
    c.clamp(1, d - 1)
}

/// Splits `x` for strong or weak generalization. Deterministic in `cfg.seed`.
///
/// The training item space is the set of items with at least one training
/// interaction; evaluation interactions on other items are discarded.
pub fn split(x: &InteractionMatrix, cfg: &SplitConfig) -> Result<SplitBundle> {
    cfg.validate()?;
    if x.nnz() == 0 {
        return Err(LareError::EmptyDataset("cannot split an empty matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.protocol {
        Protocol::Strong => split_strong(x, cfg, &mut rng),
        Protocol::Weak => split_weak(x, cfg, &mut rng),
    }
}

fn split_strong(x: &InteractionMatrix, cfg: &SplitConfig, rng: &mut ChaCha8Rng) -> Result<SplitBundle> {
    let m = x.n_users();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let (n_val, n_test) = match cfg.ratios.as_slice() {
        [_, v, t] => ((m as f64 * v).round() as usize, (m as f64 * t).round() as usize),
        [_, t] => (0, (m as f64 * t).round() as usize),
        _ => unreachable!(),
    };
    if n_val + n_test >= m {
        return Err(LareError::Config(format!(
            "{m} users are too few for the requested split"
        )));
    }
    let mut test_users = order[..n_test].to_vec();
    let mut val_users = order[n_test..n_test + n_val].to_vec();
    let mut train_users = order[n_test + n_val..].to_vec();
    test_users.sort_unstable();
    val_users.sort_unstable();
    train_users.sort_unstable();

    let mut keep_items = vec![false; x.n_items()];
    for &u in &train_users {
        for &i in x.row(u) {
            keep_items[i as usize] = true;
        }
    }
    let dropped = keep_items.iter().filter(|&&k| !k).count();
    if dropped > 0 {
        warn!("{dropped} items have no training interactions and leave the item space");
    }
    let train = x.restrict(&train_users, &keep_items)?;
    let remap = item_remap(&keep_items);

    let mut make_set = |users: &[usize], name: &str| -> Result<EvalSet> {
        let mut ids = Vec::new();
        let mut foldin = Vec::new();
        let mut heldout = Vec::new();
        for &u in users {
            let mut items: Vec<u32> = x
                .row(u)
                .iter()
                .filter_map(|&i| remap[i as usize])
                .collect();
            if items.len() < 2 {
                warn!(
                    "{name} user {} has {} usable interaction(s); excluded",
                    x.user_ids()[u],
                    items.len()
                );
                continue;
            }
            items.shuffle(rng);
            let f = foldin_count(items.len(), cfg.foldin_fraction);
            let (a, b) = items.split_at(f);
            ids.push(x.user_ids()[u].clone());
            foldin.push(a.to_vec());
            heldout.push(b.to_vec());
        }
        EvalSet::from_lists(ids, foldin, heldout, train.item_ids())
    };
    let validation = if cfg.ratios.len() == 3 {
        Some(make_set(&val_users, "validation")?)
    } else {
        None
    };
    let test = make_set(&test_users, "test")?;
    Ok(SplitBundle {
        train,
        validation,
        test,
        protocol: Protocol::Strong,
        seed: cfg.seed,
    })
}

fn split_weak(x: &InteractionMatrix, cfg: &SplitConfig, rng: &mut ChaCha8Rng) -> Result<SplitBundle> {
    let m = x.n_users();
    let train_frac = cfg.ratios[0];
    let three_way = cfg.ratios.len() == 3;
    let mut train_rows = Vec::with_capacity(m);
    let mut val_rows = Vec::with_capacity(m);
    let mut test_rows = Vec::with_capacity(m);
    for u in 0..m {
        let mut items = x.row(u).to_vec();
        items.shuffle(rng);
        if items.len() < 2 {
            train_rows.push(items);
            val_rows.push(Vec::new());
            test_rows.push(Vec::new());
            continue;
        }
        let t = foldin_count(items.len(), train_frac);
        let rest = items.split_off(t);
        let (v, te) = if three_way {
            let nv = rest.len() / 2;
            (rest[..nv].to_vec(), rest[nv..].to_vec())
        } else {
            (Vec::new(), rest)
        };
        train_rows.push(items);
        val_rows.push(v);
        test_rows.push(te);
    }
    let mut keep_items = vec![false; x.n_items()];
    for row in &train_rows {
        for &i in row {
            keep_items[i as usize] = true;
        }
    }
    let remap = item_remap(&keep_items);
    let full_train = InteractionMatrix::from_rows(train_rows, x.n_items())?
        .with_ids(x.user_ids().to_vec(), x.item_ids().to_vec())?;
    let users: Vec<usize> = (0..m).collect();
    let train = full_train.restrict(&users, &keep_items)?;

    let make_set = |rows: &[Vec<u32>]| -> Result<EvalSet> {
        let mut ids = Vec::new();
        let mut foldin = Vec::new();
        let mut heldout = Vec::new();
        for (u, row) in rows.iter().enumerate() {
            let held: Vec<u32> = row.iter().filter_map(|&i| remap[i as usize]).collect();
            if held.is_empty() {
                continue;
            }
            ids.push(x.user_ids()[u].clone());
            foldin.push(train.row(u).to_vec());
            heldout.push(held);
        }
        EvalSet::from_lists(ids, foldin, heldout, train.item_ids())
    };
    let validation = if three_way {
        Some(make_set(&val_rows)?)
    } else {
        None
    };
    let test = make_set(&test_rows)?;
    Ok(SplitBundle {
        train,
        validation,
        test,
        protocol: Protocol::Weak,
        seed: cfg.seed,
    })
}

fn item_remap(keep: &[bool]) -> Vec<Option<u32>> {
    let mut next = 0u32;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Percentage of observed interactions to replace, in [0, 100].
    pub ratio_percent: f64,
    pub seed: u64,
}

/// Replaces `round(r/100 * nnz)` observed entries with the same number of
/// previously unobserved cells. The number of stored entries is preserved.
pub fn inject_noise(x: &InteractionMatrix, cfg: &NoiseConfig) -> Result<InteractionMatrix> {
    if !(0.0..=100.0).contains(&cfg.ratio_percent) {
        return Err(LareError::Config(format!(
            "noise ratio {} outside [0, 100]",
            cfg.ratio_percent
        )));
    }
    let nnz = x.nnz();
    let k = (cfg.ratio_percent / 100.0 * nnz as f64).round() as usize;
    if k == 0 {
        return Ok(x.clone());
    }
    let cells = x.n_users() * x.n_items();
    let available = cells - nnz;
    if k > available {
        return Err(LareError::InsufficientZeroCells {
            needed: k,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut removed = vec![false; nnz];
    for idx in index::sample(&mut rng, nnz, k).into_iter() {
        removed[idx] = true;
    }
    let n = x.n_items();
    let mut added: Vec<(u32, u32)> = Vec::with_capacity(k);
    if available <= 4 * k || cells <= 1 << 16 {
        // enumerate the zero cells and sample among them
        let zeros: Vec<usize> = (0..cells)
            .filter(|&c| !x.contains(c / n, (c % n) as u32))
            .collect();
        for idx in index::sample(&mut rng, zeros.len(), k).into_iter() {
            let c = zeros[idx];
            added.push(((c / n) as u32, (c % n) as u32));
        }
    } else {
        let mut seen = HashSet::with_capacity(k);
        while added.len() < k {
            let c = rng.random_range(0..cells);
            let (u, i) = (c / n, (c % n) as u32);
            if !x.contains(u, i) && seen.insert(c) {
                added.push((u as u32, i));
            }
        }
    }
    let kept = x
        .pairs()
        .zip(removed)
        .filter_map(|(p, gone)| (!gone).then_some(p));
    InteractionMatrix::from_pairs(x.n_users(), n, kept.chain(added))?
        .with_ids(x.user_ids().to_vec(), x.item_ids().to_vec())
}
