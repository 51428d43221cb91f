use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ConsistencyError;
use crate::dataset::LanguageCode;

/// An L×L table of per-language-pair values. The diagonal is unset.
/// Consistency matrices are symmetric; matrices read from external files
/// (e.g. per-direction translation scores) need not be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    pub languages: Vec<LanguageCode>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Set where the cell's coefficient was undefined and recorded as 0.
    pub degenerate: Vec<Vec<bool>>,
}

impl PairMatrix {
    pub fn new(languages: Vec<LanguageCode>) -> Self {
        let n = languages.len();
        Self {
            languages,
            values: vec![vec![None; n]; n],
            degenerate: vec![vec![false; n]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }

    pub fn index_of(&self, lang: &LanguageCode) -> Option<usize> {
        self.languages.iter().position(|l| l == lang)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn get_by_code(&self, a: &LanguageCode, b: &LanguageCode) -> Option<f64> {
        self.get(self.index_of(a)?, self.index_of(b)?)
    }

    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.degenerate[i][j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_pair(&mut self, i: usize, j: usize, value: f64, degenerate: bool) {
        assert_ne!(i, j, "diagonal cells are unset");
        for (a, b) in [(i, j), (j, i)] {
            self.values[a][b] = Some(value);
            self.degenerate[a][b] = degenerate;
        }
    }

    pub fn set_cell(&mut self, i: usize, j: usize, value: Option<f64>) {
        self.values[i][j] = value;
    }

    /// Unordered pairs `(i, j)`, `i < j`, sorted by their language codes so
    /// that reductions do not depend on the matrix's language order.
    fn canonical_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = (0..self.len())
            .flat_map(|i| (i + 1..self.len()).map(move |j| (i, j)))
            .collect();
        pairs.sort_by(|&(a, b), &(c, d)| {
            let key = |x: usize, y: usize| {
                let (p, q) = (&self.languages[x], &self.languages[y]);
                if p <= q {
                    (p, q)
                } else {
                    (q, p)
                }
            };
            key(a, b).cmp(&key(c, d))
        });
        pairs
    }

    /// Mean over unordered off-diagonal pairs that have a value. For a
    /// symmetric matrix this equals the mean over all ordered pairs.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, j) in self.canonical_pairs() {
            if let Some(v) = self.values[i][j] {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Number of unordered pairs flagged degenerate.
    pub fn degenerate_pairs(&self) -> usize {
        self.canonical_pairs()
            .into_iter()
            .filter(|&(i, j)| self.degenerate[i][j])
            .count()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.len()).all(|i| {
            (0..self.len()).all(|j| match (self.values[i][j], self.values[j][i]) {
                (Some(a), Some(b)) => (a - b).abs() <= tol,
                (None, None) => true,
                _ => false,
            })
        })
    }

    /// The matrix restricted to `langs`, in that order.
    pub fn submatrix(&self, langs: &[LanguageCode]) -> Result<PairMatrix, ConsistencyError> {
        let idx: Vec<usize> = langs
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| ConsistencyError::UnknownLanguage(l.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut out = PairMatrix::new(langs.to_vec());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.values[a][b] = self.values[i][j];
                out.degenerate[a][b] = self.degenerate[i][j];
            }
        }
        Ok(out)
    }

    /// Mean of each row's off-diagonal values.
    pub fn row_means(&self) -> Vec<Option<f64>> {
        (0..self.len())
            .map(|i| {
                let vals: Vec<f64> = (0..self.len())
                    .filter(|&j| j != i)
                    .filter_map(|j| self.values[i][j])
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// CSV with a header row of language codes and one labeled row per
    /// language. Unset cells are empty. `comment` lines are written first,
    /// each prefixed with `# `.
    pub fn write_csv(&self, mut w: impl Write, comment: &[String]) -> std::io::Result<()> {
        for line in comment {
            writeln!(w, "# {line}")?;
        }
        write!(w, "lang")?;
        for l in &self.languages {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (i, l) in self.languages.iter().enumerate() {
            write!(w, "{l}")?;
            for v in &self.values[i] {
                match v {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
