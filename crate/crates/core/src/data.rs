//! Binary response matrices and the two multi-layer network stacks derived
//! from them.
//!
//! Each person layer `Y_i` is the clique on the respondents who answered item
//! `i` correctly and each item layer `U_k` is the clique on the items person
//! `k` answered correctly. Neither stack is materialized: edges are recomputed
//! from the response matrix on demand, which keeps memory at `O(np)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An `n x p` matrix of 0/1 responses, respondents in rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResponseMatrix {
    n: usize,
    p: usize,
    x: Vec<u8>,
    pub row_ids: Option<Vec<String>>,
    pub col_ids: Option<Vec<String>>,
}

impl ItemResponseMatrix {
    /// Builds a matrix from row-major entries. Every entry must be 0 or 1.
    pub fn new(n: usize, p: usize, x: Vec<u8>) -> Result<Self> {
        if n < 2 || p < 2 {
            return Err(Error::TooSmall { n, p });
        }
        if x.len() != n * p {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {n}x{p} matrix, got {}",
                n * p,
                x.len()
            )));
        }
        if let Some(pos) = x.iter().position(|&v| v > 1) {
            return Err(Error::NonBinary {
                row: pos / p,
                col: pos % p,
                value: x[pos].to_string(),
            });
        }
        Ok(Self {
            n,
            p,
            x,
            row_ids: None,
            col_ids: None,
        })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.as_ref().len());
        let mut x = Vec::with_capacity(n * p);
        for (row, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != p {
                return Err(Error::Ragged {
                    row,
                    found: r.len(),
                    expected: p,
                });
            }
            x.extend_from_slice(r);
        }
        Self::new(n, p, x)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> u8 {
        self.x[k * self.p + i]
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.x[k * self.p..(k + 1) * self.p]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.x
    }

    /// Indices of items answered correctly by person `k`.
    pub fn correct_items(&self, k: usize) -> Vec<usize> {
        (0..self.p).filter(|&i| self.get(k, i) == 1).collect()
    }

    /// Indices of persons who answered item `i` correctly.
    pub fn correct_persons(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&k| self.get(k, i) == 1).collect()
    }

    /// Fails with [`Error::DegenerateItem`] on the first item nobody answered
    /// correctly. The item-position mapping is undefined for such items.
    pub fn check_fittable(&self) -> Result<()> {
        let profile = degree_profile(self);
        match profile.item_totals.iter().position(|&c| c == 0) {
            Some(item) => Err(Error::DegenerateItem { item }),
            None => Ok(()),
        }
    }

    /// Respondents with a total score of zero. They are kept in the fit but
    /// their person intercepts are driven by the prior alone.
    pub fn zero_score_persons(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&k| self.row(k).iter().all(|&v| v == 0))
            .collect()
    }

    /// `M[k][l] = #items both k and l answered correctly`, i.e. the number of
    /// person layers carrying the edge (k, l). Row-major `n x n`, zero diagonal.
    pub fn person_cooccurrence(&self) -> Vec<u32> {
        let (n, p) = (self.n, self.p);
        let mut m = vec![0u32; n * n];
        for k in 0..n {
            let rk = self.row(k);
            for l in (k + 1)..n {
                let rl = self.row(l);
                let c = (0..p).filter(|&i| rk[i] & rl[i] == 1).count() as u32;
                m[k * n + l] = c;
                m[l * n + k] = c;
            }
        }
        m
    }

    /// `N[i][j] = #persons answering both i and j correctly`. Row-major `p x p`.
    pub fn item_cooccurrence(&self) -> Vec<u32> {
        let p = self.p;
        let mut m = vec![0u32; p * p];
        for k in 0..self.n {
            let items = self.correct_items(k);
            for (a, &i) in items.iter().enumerate() {
                for &j in &items[a + 1..] {
                    m[i * p + j] += 1;
                    m[j * p + i] += 1;
                }
            }
        }
        m
    }
}

/// Person-side stack: layer `i` is the `n x n` network `Y_i`.
#[derive(Debug, Clone, Copy)]
pub struct PersonNetworkStack<'a> {
    x: &'a ItemResponseMatrix,
}

impl PersonNetworkStack<'_> {
    pub fn layers(&self) -> usize {
        self.x.p
    }

    pub fn nodes(&self) -> usize {
        self.x.n
    }

    #[inline]
    pub fn edge(&self, layer: usize, k: usize, l: usize) -> u8 {
        if k == l {
            0
        } else {
            self.x.get(k, layer) * self.x.get(l, layer)
        }
    }

    /// Dense copy of one layer; intended for inspection and small inputs.
    pub fn dense_layer(&self, layer: usize) -> Vec<Vec<u8>> {
        let n = self.x.n;
        (0..n)
            .map(|k| (0..n).map(|l| self.edge(layer, k, l)).collect())
            .collect()
    }
}

/// Item-side stack: layer `k` is the `p x p` network `U_k`.
#[derive(Debug, Clone, Copy)]
pub struct ItemNetworkStack<'a> {
    x: &'a ItemResponseMatrix,
}

impl ItemNetworkStack<'_> {
    pub fn layers(&self) -> usize {
        self.x.n
    }

    pub fn nodes(&self) -> usize {
        self.x.p
    }

    #[inline]
    pub fn edge(&self, layer: usize, i: usize, j: usize) -> u8 {
        if i == j {
            0
        } else {
            self.x.get(layer, i) * self.x.get(layer, j)
        }
    }

    pub fn dense_layer(&self, layer: usize) -> Vec<Vec<u8>> {
        let p = self.x.p;
        (0..p)
            .map(|i| (0..p).map(|j| self.edge(layer, i, j)).collect())
            .collect()
    }
}

pub fn build_person_networks(x: &ItemResponseMatrix) -> PersonNetworkStack<'_> {
    PersonNetworkStack { x }
}

pub fn build_item_networks(x: &ItemResponseMatrix) -> ItemNetworkStack<'_> {
    ItemNetworkStack { x }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeProfile {
    /// `s_k`, total score of each respondent.
    pub person_scores: Vec<usize>,
    /// `c_i`, number of correct responses to each item.
    pub item_totals: Vec<usize>,
}

impl DegreeProfile {
    /// Degree of person `k` in person layer `i`.
    pub fn person_layer_degree(&self, x: &ItemResponseMatrix, k: usize, i: usize) -> usize {
        let xki = x.get(k, i) as usize;
        xki * (self.item_totals[i] - xki)
    }

    /// Degree of person `k` summed over all person layers.
    pub fn person_total_degree(&self, x: &ItemResponseMatrix, k: usize) -> usize {
        (0..x.p()).map(|i| self.person_layer_degree(x, k, i)).sum()
    }
}

pub fn degree_profile(x: &ItemResponseMatrix) -> DegreeProfile {
    let mut person_scores = vec![0usize; x.n];
    let mut item_totals = vec![0usize; x.p];
    for k in 0..x.n {
        for (i, &v) in x.row(k).iter().enumerate() {
            person_scores[k] += v as usize;
            item_totals[i] += v as usize;
        }
    }
    DegreeProfile {
        person_scores,
        item_totals,
    }
}

// ---------------------------------------------------------------------------
// CSV input
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// `None` detects a header: the first row is a header when any of its
    /// response cells is not `0` or `1`.
    pub has_header: Option<bool>,
    /// First column carries respondent labels.
    pub id_column: bool,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "." | "?")
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<u8> {
    match cell {
        "0" => Ok(0),
        "1" => Ok(1),
        c if is_missing(c) => Err(Error::MissingResponse { row, col }),
        c => Err(Error::NonBinary {
            row,
            col,
            value: c.to_string(),
        }),
    }
}

pub fn read_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<ItemResponseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    let skip = usize::from(opts.id_column);
    let header = match opts.has_header {
        Some(h) => h,
        None => records
            .first()
            .map(|r| r.iter().skip(skip).any(|c| c != "0" && c != "1"))
            .unwrap_or(false),
    };
    let mut col_ids = None;
    let body = if header && !records.is_empty() {
        col_ids = Some(records[0].iter().skip(skip).map(String::from).collect());
        &records[1..]
    } else {
        &records[..]
    };
    let p = body.first().map_or(0, |r| r.len().saturating_sub(skip));
    let mut x = Vec::with_capacity(body.len() * p);
    let mut row_ids = Vec::new();
    for (row, rec) in body.iter().enumerate() {
        if rec.len().saturating_sub(skip) != p {
            return Err(Error::Ragged {
                row,
                found: rec.len().saturating_sub(skip),
                expected: p,
            });
        }
        if opts.id_column {
            row_ids.push(rec[0].to_string());
        }
        for (col, cell) in rec.iter().skip(skip).enumerate() {
            x.push(parse_cell(cell, row, col)?);
        }
    }
    let mut m = ItemResponseMatrix::new(body.len(), p, x)?;
    m.col_ids = col_ids;
    if opts.id_column {
        m.row_ids = Some(row_ids);
    }
    Ok(m)
}

pub fn load_csv(path: &Path, opts: CsvOptions) -> Result<ItemResponseMatrix> {
    let f = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    read_csv(BufReader::new(f), opts).map_err(|e| e.context(format!("read {}", path.display())))
}

pub fn write_csv<W: Write>(x: &ItemResponseMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = match &x.col_ids {
        Some(ids) => ids.clone(),
        None => (1..=x.p).map(|i| format!("item{i}")).collect(),
    };
    w.write_record(&header)?;
    for k in 0..x.n {
        w.write_record(x.row(k).iter().map(|v| if *v == 1 { "1" } else { "0" }))?;
    }
    w.flush().map_err(|e| Error::io("flush csv", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary cache
// ---------------------------------------------------------------------------

/// Magic bytes of the bit-packed cache format.
pub const CACHE_MAGIC: &[u8; 8] = b"IRMBITS1";

/// Serializes the matrix as `CACHE_MAGIC`, `n: u64 LE`, `p: u64 LE`, then the
/// row-major entries packed 8 per byte, least significant bit first.
pub fn write_cache<W: Write>(x: &ItemResponseMatrix, mut w: W) -> std::io::Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(x.n as u64).to_le_bytes())?;
    w.write_all(&(x.p as u64).to_le_bytes())?;
    let mut packed = vec![0u8; x.x.len().div_ceil(8)];
    for (t, &v) in x.x.iter().enumerate() {
        packed[t / 8] |= v << (t % 8);
    }
    w.write_all(&packed)
}

pub fn read_cache<R: Read>(mut r: R, path: &Path) -> Result<ItemResponseMatrix> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| bad("truncated header"))?;
    let n = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf).map_err(|_| bad("truncated header"))?;
    let p = u64::from_le_bytes(buf) as usize;
    let total = n.checked_mul(p).ok_or_else(|| bad("size overflow"))?;
    let mut packed = vec![0u8; total.div_ceil(8)];
    r.read_exact(&mut packed).map_err(|_| bad("truncated payload"))?;
    let x = (0..total).map(|t| (packed[t / 8] >> (t % 8)) & 1).collect();
    ItemResponseMatrix::new(n, p, x)
}

pub fn save_cache(x: &ItemResponseMatrix, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(f);
    write_cache(x, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn load_cache(path: &Path) -> Result<ItemResponseMatrix> {
    let f = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    read_cache(BufReader::new(f), path)
}

/// Loads a cache file when it starts with [`CACHE_MAGIC`], CSV otherwise.
pub fn load_any(path: &Path, opts: CsvOptions) -> Result<ItemResponseMatrix> {
    let mut head = [0u8; 8];
    let is_cache = File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == CACHE_MAGIC)
        .unwrap_or(false);
    if is_cache {
        load_cache(path)
    } else {
        load_csv(path, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> ItemResponseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n * p).map(|_| rng.random_range(0..2u8)).collect();
        ItemResponseMatrix::new(n, p, x).unwrap()
    }

    #[test]
    fn two_by_two_layers() {
        let x = ItemResponseMatrix::from_rows(&[[1, 1], [1, 0]]).unwrap();
        let y = build_person_networks(&x);
        assert_eq!(y.dense_layer(0), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(y.dense_layer(1), vec![vec![0, 0], vec![0, 0]]);
        let u = build_item_networks(&x);
        assert_eq!(u.dense_layer(0), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(u.dense_layer(1), vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn all_zero_matrix_has_empty_layers() {
        let x = ItemResponseMatrix::new(3, 3, vec![0; 9]).unwrap();
        let y = build_person_networks(&x);
        let u = build_item_networks(&x);
        for layer in 0..3 {
            assert!(y.dense_layer(layer).iter().flatten().all(|&e| e == 0));
            assert!(u.dense_layer(layer).iter().flatten().all(|&e| e == 0));
        }
        assert_eq!(x.zero_score_persons(), vec![0, 1, 2]);
        assert!(matches!(
            x.check_fittable(),
            Err(Error::DegenerateItem { item: 0 })
        ));
    }

    #[test]
    fn single_correct_answer_gives_empty_item_layer() {
        let x = ItemResponseMatrix::from_rows(&[[0, 1, 0], [1, 1, 1]]).unwrap();
        let u = build_item_networks(&x);
        assert!(u.dense_layer(0).iter().flatten().all(|&e| e == 0));
        assert_eq!(u.dense_layer(1)[0][2], 1);
    }

    #[test]
    fn stacks_match_triple_loop() {
        let x = random_matrix(6, 4, 11);
        let rows: Vec<Vec<u8>> = (0..6).map(|k| x.row(k).to_vec()).collect();
        let y = build_person_networks(&x);
        let u = build_item_networks(&x);
        for i in 0..4 {
            for k in 0..6 {
                for l in 0..6 {
                    let want = if k == l { 0 } else { rows[k][i] * rows[l][i] };
                    assert_eq!(y.edge(i, k, l), want);
                }
            }
        }
        for k in 0..6 {
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { 0 } else { rows[k][i] * rows[k][j] };
                    assert_eq!(u.edge(k, i, j), want);
                }
            }
        }
    }

    #[test]
    fn degree_profile_examples() {
        let eye = ItemResponseMatrix::from_rows(&[[1, 0, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
        let d = degree_profile(&eye);
        assert_eq!(d.person_scores, vec![1, 1, 1]);
        assert_eq!(d.item_totals, vec![1, 1, 1]);
        let ones = ItemResponseMatrix::new(3, 3, vec![1; 9]).unwrap();
        let d = degree_profile(&ones);
        assert_eq!(d.person_scores, vec![3, 3, 3]);
        assert_eq!(d.item_totals, vec![3, 3, 3]);
    }

    #[test]
    fn degree_profile_matches_reversed_summation() {
        let x = random_matrix(6, 4, 5);
        let d = degree_profile(&x);
        let mut s = vec![0usize; 6];
        let mut c = vec![0usize; 4];
        for i in (0..4).rev() {
            for k in (0..6).rev() {
                s[k] += x.get(k, i) as usize;
                c[i] += x.get(k, i) as usize;
            }
        }
        assert_eq!(d.person_scores, s);
        assert_eq!(d.item_totals, c);
        let y = build_person_networks(&x);
        for k in 0..6 {
            let brute: usize = (0..4)
                .map(|i| (0..6).map(|l| y.edge(i, k, l) as usize).sum::<usize>())
                .sum();
            assert_eq!(d.person_total_degree(&x, k), brute);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            ItemResponseMatrix::new(1, 3, vec![0; 3]),
            Err(Error::TooSmall { .. })
        ));
        assert!(matches!(
            ItemResponseMatrix::new(2, 2, vec![0, 1, 2, 0]),
            Err(Error::NonBinary { row: 1, col: 0, .. })
        ));
        let err = read_csv("1,0\n1,NA\n".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingResponse { row: 1, col: 1 }));
        let err = read_csv("1,0\n1\n".as_bytes(), CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Ragged { row: 1, .. }));
    }

    #[test]
    fn csv_header_and_ids() {
        let text = "id,a,b,c\ns1,1,0,1\ns2,0,1,1\n";
        let x = read_csv(
            text.as_bytes(),
            CsvOptions {
                has_header: None,
                id_column: true,
            },
        )
        .unwrap();
        assert_eq!((x.n(), x.p()), (2, 3));
        assert_eq!(x.row(1), &[0, 1, 1]);
        assert_eq!(x.row_ids.as_deref().unwrap(), ["s1", "s2"]);
        assert_eq!(x.col_ids.as_deref().unwrap(), ["a", "b", "c"]);

        let headerless = read_csv("1,0\n0,1\n".as_bytes(), CsvOptions::default()).unwrap();
        assert_eq!(headerless.n(), 2);
        assert!(headerless.col_ids.is_none());
    }

    #[test]
    fn cache_rejects_bad_magic() {
        let err = read_cache(&b"NOTMAGIC\0\0\0"[..], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    proptest! {
        #[test]
        fn cache_and_csv_roundtrip(n in 2usize..20, p in 2usize..20, seed in any::<u64>()) {
            let x = random_matrix(n, p, seed);
            let mut buf = Vec::new();
            write_cache(&x, &mut buf).unwrap();
            prop_assert_eq!(buf.len(), 24 + (n * p).div_ceil(8));
            let back = read_cache(&buf[..], Path::new("mem")).unwrap();
            prop_assert_eq!(back.as_slice(), x.as_slice());

            let mut text = Vec::new();
            write_csv(&x, &mut text).unwrap();
            let back = read_csv(&text[..], CsvOptions::default()).unwrap();
            prop_assert_eq!(back.as_slice(), x.as_slice());
        }

        #[test]
        fn clique_edge_counts(n in 2usize..12, p in 2usize..8, seed in any::<u64>()) {
            let x = random_matrix(n, p, seed);
            let d = degree_profile(&x);
            let y = build_person_networks(&x);
            let u = build_item_networks(&x);
            let choose2 = |m: usize| m * m.saturating_sub(1) / 2;
            for i in 0..p {
                let mut edges = 0;
                for k in 0..n {
                    prop_assert_eq!(y.edge(i, k, k), 0);
                    for l in 0..n {
                        prop_assert_eq!(y.edge(i, k, l), y.edge(i, l, k));
                        if k < l { edges += y.edge(i, k, l) as usize; }
                    }
                }
                prop_assert_eq!(edges, choose2(d.item_totals[i]));
                // the clique's vertex set recovers the column whenever c_i >= 2
                if d.item_totals[i] >= 2 {
                    for k in 0..n {
                        let in_clique = (0..n).any(|l| y.edge(i, k, l) == 1);
                        prop_assert_eq!(u8::from(in_clique), x.get(k, i));
                    }
                }
            }
            for k in 0..n {
                let mut edges = 0;
                for i in 0..p {
                    for j in (i + 1)..p {
                        prop_assert_eq!(u.edge(k, i, j), u.edge(k, j, i));
                        edges += u.edge(k, i, j) as usize;
                    }
                }
                prop_assert_eq!(edges, choose2(d.person_scores[k]));
            }
        }
    }
}
