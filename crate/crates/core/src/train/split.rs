//! Subject-wise train/validation/test partitions.

use std::collections::HashSet;

use thiserror::Error;

use crate::config::{ConfigError, KeyValues};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("{subjects} subjects cannot fill {test} test and {val} validation slots plus training")]
    NotEnoughSubjects { subjects: usize, test: usize, val: usize },
    #[error("duplicate subject `{0}`")]
    Duplicate(String),
    #[error("fold {fold} out of range ({folds} folds)")]
    BadFold { fold: usize, folds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub test: Vec<String>,
    pub val: Vec<String>,
    /// Partition of the remaining subjects.
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    /// The last `n_test` subjects form the test set, the `n_val` before them
    /// the validation set, and the rest are dealt into up to `n_folds`
    /// contiguous folds of near-equal size.
    pub fn fixed(subjects: &[String], n_test: usize, n_val: usize, n_folds: usize) -> Result<Self, SplitError> {
        let mut seen = HashSet::new();
        if let Some(dup) = subjects.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(SplitError::Duplicate(dup.clone()));
        }
        let n = subjects.len();
        if n < n_test + n_val + 1 {
            return Err(SplitError::NotEnoughSubjects {
                subjects: n,
                test: n_test,
                val: n_val,
            });
        }
        let train_end = n - n_test - n_val;
        let rest = &subjects[..train_end];
        let k = n_folds.clamp(1, rest.len());
        let (base, extra) = (rest.len() / k, rest.len() % k);
        let mut folds = Vec::with_capacity(k);
        let mut start = 0;
        for f in 0..k {
            let len = base + usize::from(f < extra);
            folds.push(rest[start..start + len].to_vec());
            start += len;
        }
        Ok(Self {
            test: subjects[n - n_test..].to_vec(),
            val: subjects[train_end..n - n_test].to_vec(),
            folds,
        })
    }

    /// The default protocol: 4 test, 4 validation, 10 training folds.
    pub fn standard(subjects: &[String]) -> Result<Self, SplitError> {
        Self::fixed(subjects, 4, 4, 10)
    }

    /// Training subjects; with `Some(f)` fold `f` is held out.
    pub fn train_subjects(&self, held_out: Option<usize>) -> Result<Vec<String>, SplitError> {
        if let Some(f) = held_out {
            if f >= self.folds.len() {
                return Err(SplitError::BadFold {
                    fold: f,
                    folds: self.folds.len(),
                });
            }
        }
        Ok(self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != held_out)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect())
    }
}

/// Split sizes, read from `split.*` keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub test: usize,
    pub val: usize,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test: 4,
            val: 4,
            folds: 10,
        }
    }
}

impl SplitConfig {
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), ConfigError> {
        for entry in kv.with_prefix("split.") {
            match &entry.key["split.".len()..] {
                "test" => self.test = entry.parse()?,
                "val" => self.val = entry.parse()?,
                "folds" => self.folds = entry.parse()?,
                _ => return Err(entry.unknown()),
            }
        }
        Ok(())
    }

    pub fn plan(&self, subjects: &[String]) -> Result<SplitPlan, SplitError> {
        SplitPlan::fixed(subjects, self.test, self.val, self.folds)
    }

    pub fn to_text(&self) -> String {
        format!(
            "split.test = {}\nsplit.val = {}\nsplit.folds = {}\n",
            self.test, self.val, self.folds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn standard_protocol() {
        let s = ids(48);
        let plan = SplitPlan::standard(&s).unwrap();
        assert_eq!(plan.test, s[44..].to_vec());
        assert_eq!(plan.val, s[40..44].to_vec());
        assert_eq!(plan.folds.len(), 10);
        assert!(plan.folds.iter().all(|f| f.len() == 4));
        let mut all: Vec<String> = plan.folds.concat();
        all.extend(plan.val.clone());
        all.extend(plan.test.clone());
        all.sort();
        assert_eq!(all, s);
        assert_eq!(plan.train_subjects(Some(0)).unwrap().len(), 36);
        assert_eq!(plan.train_subjects(None).unwrap().len(), 40);
        assert!(plan.train_subjects(Some(10)).is_err());
    }

    #[test]
    fn split_config_keys() {
        let mut c = SplitConfig::default();
        c.apply(&KeyValues::parse("split.test = 2\nsplit.val = 1\n").unwrap())
            .unwrap();
        assert_eq!(c.plan(&ids(8)).unwrap(), SplitPlan::fixed(&ids(8), 2, 1, 10).unwrap());
        let mut back = SplitConfig::default();
        back.apply(&KeyValues::parse(&c.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(c.apply(&KeyValues::parse("split.train = 3\n").unwrap()).is_err());
    }

    #[test]
    fn small_cohorts() {
        let plan = SplitPlan::fixed(&ids(8), 2, 1, 10).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert_eq!(plan.train_subjects(None).unwrap(), ids(5));
        assert!(SplitPlan::fixed(&ids(3), 2, 1, 10).is_err());
        let mut dup = ids(9);
        dup[3] = dup[0].clone();
        assert!(matches!(SplitPlan::fixed(&dup, 2, 1, 3), Err(SplitError::Duplicate(_))));
    }
}
