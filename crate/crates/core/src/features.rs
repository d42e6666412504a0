//! Covariate construction.
//!
//! Two blocks enter the model: complex covariates `ψ` (word-presence
//! indicators from free text, fed through the hidden layer) and linear
//! covariates `x` (intercept, demographic indicators, and the area's row of a
//! spatial eigenvector basis).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{BudisError, Result};

/// Fixed English stopword list applied by [`tokenize`].
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercases, splits on any non-alphanumeric character, and drops stopwords
/// and tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !is_stopword(t))
        .collect()
}

/// Top words by document frequency, most frequent first, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(texts: &[S], size: usize) -> Result<Self> {
        if size == 0 {
            return Err(BudisError::invalid("vocabulary size must be at least 1"));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        for text in texts {
            let unique: HashSet<String> = tokenize(text.as_ref()).into_iter().collect();
            for token in unique {
                *df.entry(token).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(BudisError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(size);
        Ok(Self::from_ranked(ranked))
    }

    fn from_ranked(ranked: Vec<(String, usize)>) -> Self {
        let index = ranked.iter().enumerate().map(|(i, (w, _))| (w.clone(), i)).collect();
        let (words, counts) = ranked.into_iter().unzip();
        Self { words, counts, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn document_frequencies(&self) -> &[usize] {
        &self.counts
    }

    /// Presence indicators: entry `j` is 1 iff word `j` occurs in `text`.
    pub fn indicators(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for token in tokenize(text) {
            if let Some(&j) = self.index.get(&token) {
                out[j] = 1.0;
            }
        }
        out
    }

    /// CSV with columns `rank,token,document_frequency`, rank starting at 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "token", "document_frequency"])?;
        for (i, (word, count)) in self.words.iter().zip(&self.counts).enumerate() {
            w.write_record([(i + 1).to_string(), word.clone(), count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, path: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut ranked = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 3 {
                return Err(BudisError::parse(path, line, "expected rank,token,document_frequency"));
            }
            let rank: usize = rec[0].parse().map_err(|_| BudisError::parse(path, line, "bad rank"))?;
            if rank != i + 1 {
                return Err(BudisError::parse(path, line, "ranks must be 1, 2, 3, ..."));
            }
            let count: usize = rec[2]
                .parse()
                .map_err(|_| BudisError::parse(path, line, "bad document frequency"))?;
            ranked.push((rec[1].to_string(), count));
        }
        Ok(Self::from_ranked(ranked))
    }
}

/// Complex covariates for one text: a constant `1` followed by the word
/// indicators, length `vocab.len() + 1`.
pub fn complex_covariates(vocab: &Vocabulary, text: &str) -> Vec<f64> {
    let mut psi = Vec::with_capacity(vocab.len() + 1);
    psi.push(1.0);
    psi.extend(vocab.indicators(text));
    psi
}

/// Leading eigenvectors of a symmetric area adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    areas: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

impl SpatialBasis {
    /// Columns are the `q` eigenvectors with the largest (algebraic)
    /// eigenvalues, in descending order, unit-norm, with the first entry of
    /// magnitude above `1e-12` made positive.
    pub fn from_adjacency(areas: Vec<String>, adjacency: &DMatrix<f64>, q: usize) -> Result<Self> {
        let m = adjacency.nrows();
        if adjacency.ncols() != m {
            return Err(BudisError::DimensionMismatch {
                what: "adjacency columns",
                expected: m,
                found: adjacency.ncols(),
            });
        }
        if areas.len() != m {
            return Err(BudisError::DimensionMismatch {
                what: "area labels",
                expected: m,
                found: areas.len(),
            });
        }
        if q == 0 || q > m {
            return Err(BudisError::invalid(format!("basis size q must be in 1..={m}, got {q}")));
        }
        for i in 0..m {
            if adjacency[(i, i)] != 0.0 {
                return Err(BudisError::invalid(format!(
                    "adjacency diagonal must be zero (entry {i})"
                )));
            }
            for j in 0..i {
                if adjacency[(i, j)] != adjacency[(j, i)] {
                    return Err(BudisError::NotSymmetric { row: i, col: j });
                }
            }
        }
        let index = index_labels(&areas)?;
        let eig = SymmetricEigen::new(adjacency.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut vectors = DMatrix::zeros(m, q);
        let mut values = Vec::with_capacity(q);
        for (col, &k) in order.iter().take(q).enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            v /= v.norm();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v = -v;
                }
            }
            vectors.set_column(col, &v);
            values.push(eig.eigenvalues[k]);
        }
        Ok(Self {
            areas,
            index,
            vectors,
            values,
        })
    }

    /// Basis from explicitly supplied rows (one per area).
    pub fn from_rows(areas: Vec<String>, vectors: DMatrix<f64>, values: Vec<f64>) -> Result<Self> {
        if vectors.nrows() != areas.len() {
            return Err(BudisError::DimensionMismatch {
                what: "basis rows",
                expected: areas.len(),
                found: vectors.nrows(),
            });
        }
        if values.len() != vectors.ncols() {
            return Err(BudisError::DimensionMismatch {
                what: "basis eigenvalues",
                expected: vectors.ncols(),
                found: values.len(),
            });
        }
        let index = index_labels(&areas)?;
        Ok(Self {
            areas,
            index,
            vectors,
            values,
        })
    }

    pub fn areas(&self) -> &[String] {
        &self.areas
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn area_index(&self, area: &str) -> Option<usize> {
        self.index.get(area).copied()
    }

    pub fn row(&self, area: &str) -> Result<Vec<f64>> {
        let i = self
            .area_index(area)
            .ok_or_else(|| BudisError::UnknownArea(area.to_string()))?;
        Ok(self.vectors.row(i).iter().copied().collect())
    }

    /// CSV with an `area` column, then `ev1..evq`; a final row labelled
    /// `#eigenvalue` carries the eigenvalues.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["area".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("ev{k}")));
        w.write_record(&header)?;
        for (i, area) in self.areas.iter().enumerate() {
            let mut rec = vec![area.clone()];
            rec.extend(self.vectors.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["#eigenvalue".to_string()];
        rec.extend(self.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, path: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let q = r.headers()?.len().saturating_sub(1);
        let mut areas = Vec::new();
        let mut data = Vec::new();
        let mut values = None;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let nums = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| BudisError::parse(path, line, format!("bad number `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if nums.len() != q {
                return Err(BudisError::parse(path, line, "wrong number of columns"));
            }
            if &rec[0] == "#eigenvalue" {
                values = Some(nums);
            } else {
                areas.push(rec[0].to_string());
                data.extend(nums);
            }
        }
        let values = values.ok_or_else(|| BudisError::parse(path, 0, "missing #eigenvalue row"))?;
        let vectors = DMatrix::from_row_slice(areas.len(), q, &data);
        Self::from_rows(areas, vectors, values)
    }
}

fn index_labels(areas: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(areas.len());
    for (i, a) in areas.iter().enumerate() {
        if index.insert(a.clone(), i).is_some() {
            return Err(BudisError::invalid(format!("duplicate area label `{a}`")));
        }
    }
    Ok(index)
}

/// Reads an adjacency CSV: a header row of area labels, then a square 0/1
/// body in the same order.
pub fn read_adjacency_csv<R: Read>(input: R, path: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_reader(input);
    let areas: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let m = areas.len();
    let mut data = Vec::with_capacity(m * m);
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != m {
            return Err(BudisError::parse(path, line, format!("expected {m} columns")));
        }
        for v in rec.iter() {
            match v.trim() {
                "0" => data.push(0.0),
                "1" => data.push(1.0),
                other => return Err(BudisError::parse(path, line, format!("entry `{other}` is not 0/1"))),
            }
        }
        rows += 1;
    }
    if rows != m {
        return Err(BudisError::parse(
            path,
            rows + 1,
            format!("expected {m} rows, found {rows}"),
        ));
    }
    Ok((areas, DMatrix::from_row_slice(m, m, &data)))
}

pub fn write_adjacency_csv<W: Write>(areas: &[String], adjacency: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(areas)?;
    for row in adjacency.row_iter() {
        w.write_record(row.iter().map(|v| if *v != 0.0 { "1" } else { "0" }))?;
    }
    w.flush()?;
    Ok(())
}

/// `[1, indicators…, basis row of area]`.
pub fn linear_covariates(indicators: &[bool], basis: &SpatialBasis, area: &str) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(1 + indicators.len() + basis.dim());
    x.push(1.0);
    x.extend(indicators.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    x.extend(basis.row(area)?);
    Ok(x)
}

/// Names of the linear-covariate columns matching [`linear_covariates`].
pub fn linear_covariate_names(demographics: &[String], basis: &SpatialBasis) -> Vec<String> {
    let mut names = vec!["intercept".to_string()];
    names.extend(demographics.iter().cloned());
    names.extend((1..=basis.dim()).map(|k| format!("ev{k}")));
    names
}

/// Per-area counts, in label order.
pub fn count_by_label<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.to_string()).or_default() += 1;
    }
    out
}
