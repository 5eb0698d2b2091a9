//! Named design matrices shared by the treatment model and the Cox engine.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Intercept,
    /// One-hot indicator of a non-reference level of categorical `group`.
    Indicator {
        group: String,
    },
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("column {name} has {found} values, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("column {0} contains a non-finite value")]
    NonFinite(String),
    #[error("duplicate column name {0}")]
    DuplicateName(String),
}

/// Column-oriented numeric design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: Vec<DesignColumn>,
    n_rows: usize,
}

impl DesignMatrix {
    pub fn new(n_rows: usize) -> Self {
        DesignMatrix {
            columns: Vec::new(),
            n_rows,
        }
    }

    pub fn with_intercept(n_rows: usize) -> Self {
        let mut d = DesignMatrix::new(n_rows);
        d.columns.push(DesignColumn {
            name: "(Intercept)".into(),
            kind: ColumnKind::Intercept,
            values: vec![1.0; n_rows],
        });
        d
    }

    pub fn push(&mut self, column: DesignColumn) -> Result<(), DesignError> {
        if column.values.len() != self.n_rows {
            return Err(DesignError::LengthMismatch {
                name: column.name,
                expected: self.n_rows,
                found: column.values.len(),
            });
        }
        if column.values.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite(column.name));
        }
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(DesignError::DuplicateName(column.name));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn push_continuous(&mut self, name: &str, values: Vec<f64>) -> Result<(), DesignError> {
        self.push(DesignColumn {
            name: name.into(),
            kind: ColumnKind::Continuous,
            values,
        })
    }

    /// Adds one indicator per non-reference level. Levels are taken in
    /// first-appearance order and the first one is the reference. Returns the
    /// levels used.
    pub fn push_categorical<S: AsRef<str>>(
        &mut self,
        name: &str,
        labels: &[S],
    ) -> Result<Vec<String>, DesignError> {
        let mut levels: Vec<String> = Vec::new();
        for l in labels {
            if !levels.iter().any(|x| x == l.as_ref()) {
                levels.push(l.as_ref().to_string());
            }
        }
        self.push_categorical_with_levels(name, labels, &levels)?;
        Ok(levels)
    }

    /// Indicators for `levels[1..]`; labels not in `levels` get all zeros.
    pub fn push_categorical_with_levels<S: AsRef<str>>(
        &mut self,
        name: &str,
        labels: &[S],
        levels: &[String],
    ) -> Result<(), DesignError> {
        for level in levels.iter().skip(1) {
            let values = labels
                .iter()
                .map(|l| f64::from(u8::from(l.as_ref() == level)))
                .collect();
            self.push(DesignColumn {
                name: format!("{name}={level}"),
                kind: ColumnKind::Indicator { group: name.into() },
                values,
            })?;
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&DesignColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn has_intercept(&self) -> bool {
        self.columns.iter().any(|c| c.kind == ColumnKind::Intercept)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.values[i]).collect()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select(&self, keep: &[usize]) -> DesignMatrix {
        DesignMatrix {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            n_rows: self.n_rows,
        }
    }

    /// Indices of a maximal linearly independent prefix-greedy set of columns
    /// and the names of the columns that were dropped as aliased.
    ///
    /// With `center` the columns are mean-centered first, so constant columns
    /// count as aliased (appropriate for models without an intercept such as
    /// Cox regression).
    pub fn independent_columns(&self, center: bool) -> (Vec<usize>, Vec<String>) {
        const TOL: f64 = 1e-9;
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for (j, col) in self.columns.iter().enumerate() {
            let mut v = col.values.clone();
            if center && !v.is_empty() {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter_mut().for_each(|x| *x -= m);
            }
            let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Two passes of modified Gram-Schmidt for numerical stability.
            for _ in 0..2 {
                for q in &basis {
                    let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 > 0.0 && norm > TOL * norm0.max(1.0) {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
                keep.push(j);
            } else {
                dropped.push(col.name.clone());
            }
        }
        (keep, dropped)
    }
}
