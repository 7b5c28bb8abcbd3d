//! Patient-grouped stratified k-fold assignment.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};

/// Search budget for the exact balancing pass.
const REPAIR_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_lesion: BTreeMap<String, usize>,
    pub seed: u64,
}

/// One row of the input to [`assign_folds`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LesionRef {
    pub lesion_id: String,
    pub patient_id: String,
    pub label: Label,
}

impl FoldAssignment {
    pub fn fold_of(&self, lesion_id: &str) -> Option<usize> {
        self.fold_of_lesion.get(lesion_id).copied()
    }

    /// Lesion ids in `fold`, in id order.
    pub fn lesions_in(&self, fold: usize) -> Vec<&str> {
        self.fold_of_lesion
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of_lesion.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

pub fn make_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let refs: Vec<LesionRef> = dataset
        .lesions
        .iter()
        .map(|l| LesionRef {
            lesion_id: l.lesion_id.clone(),
            patient_id: l.patient_id.clone(),
            label: l.label,
        })
        .collect();
    assign_folds(&refs, k, seed)
}

#[derive(Debug, Clone)]
struct Patient<'a> {
    id: &'a str,
    /// `[malignant, benign]`
    counts: [usize; 2],
}

fn class_index(label: Label) -> usize {
    if label.is_malignant() {
        0
    } else {
        1
    }
}

pub fn assign_folds(lesions: &[LesionRef], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    let mut by_patient: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for l in lesions {
        if !seen.insert(l.lesion_id.as_str()) {
            return Err(Error::Invalid(format!("duplicate lesion id {}", l.lesion_id)));
        }
        by_patient.entry(&l.patient_id).or_default()[class_index(l.label)] += 1;
    }
    for (c, name) in ["malignant", "benign"].iter().enumerate() {
        let n = by_patient.values().filter(|v| v[c] > 0).count();
        if n < k {
            return Err(Error::Invalid(format!(
                "{k}-fold split needs at least {k} patients with {name} lesions, found {n}"
            )));
        }
    }

    let mut patients: Vec<Patient<'_>> = by_patient.into_iter().map(|(id, counts)| Patient { id, counts }).collect();
    patients.sort_by(|a, b| {
        b.counts[0]
            .cmp(&a.counts[0])
            .then(b.counts[1].cmp(&a.counts[1]))
            .then(a.id.cmp(b.id))
    });

    let mut fold_of_patient = greedy(&patients, k, seed);
    if !is_balanced(&patients, &fold_of_patient, k) {
        match exact_balance(&patients, k) {
            Some(found) => fold_of_patient = found,
            None => log::warn!("no fold assignment keeps per-class counts within one; using the greedy split"),
        }
    }

    let patient_fold: BTreeMap<&str, usize> = patients.iter().map(|p| p.id).zip(fold_of_patient).collect();
    let fold_of_lesion = lesions
        .iter()
        .map(|l| (l.lesion_id.clone(), patient_fold[l.patient_id.as_str()]))
        .collect();
    Ok(FoldAssignment { k, fold_of_lesion, seed })
}

fn greedy(patients: &[Patient<'_>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![[0usize; 2]; k];
    let mut out = Vec::with_capacity(patients.len());
    for p in patients {
        // Only the touched fold changes, so compare the delta of Σ count².
        let cost = |f: usize| {
            let c = counts[f];
            let class_cost: usize = (0..2).map(|j| 2 * c[j] * p.counts[j] + p.counts[j] * p.counts[j]).sum();
            let total = c[0] + c[1];
            let n = p.counts[0] + p.counts[1];
            (class_cost, 2 * total * n + n * n)
        };
        let best = (0..k).map(cost).min().expect("k >= 2");
        let tied: Vec<usize> = (0..k).filter(|&f| cost(f) == best).collect();
        let f = tied[rng.random_range(0..tied.len())];
        counts[f][0] += p.counts[0];
        counts[f][1] += p.counts[1];
        out.push(f);
    }
    out
}

fn is_balanced(patients: &[Patient<'_>], fold_of: &[usize], k: usize) -> bool {
    let mut counts = vec![[0usize; 2]; k];
    for (p, &f) in patients.iter().zip(fold_of) {
        counts[f][0] += p.counts[0];
        counts[f][1] += p.counts[1];
    }
    (0..2).all(|c| {
        let max = counts.iter().map(|v| v[c]).max().unwrap_or(0);
        let min = counts.iter().map(|v| v[c]).min().unwrap_or(0);
        max - min <= 1
    })
}

/// Depth-first search for an assignment with every per-class fold count in
/// `{⌊T/k⌋, ⌈T/k⌉}`. Returns `None` when none exists or the budget runs out.
fn exact_balance(patients: &[Patient<'_>], k: usize) -> Option<Vec<usize>> {
    let totals = [0, 1].map(|c| patients.iter().map(|p| p.counts[c]).sum::<usize>());
    let cap = totals.map(|t| t.div_ceil(k));
    let floor = totals.map(|t| t / k);
    // Number of folds allowed to reach the ceiling.
    let ceil_slots = [0, 1].map(|c| if cap[c] == floor[c] { k } else { totals[c] - floor[c] * k });

    struct Search<'s> {
        patients: &'s [Patient<'s>],
        k: usize,
        cap: [usize; 2],
        floor: [usize; 2],
        ceil_slots: [usize; 2],
        counts: Vec<[usize; 2]>,
        assign: Vec<usize>,
        nodes: usize,
    }

    impl Search<'_> {
        fn feasible(&self) -> bool {
            (0..2).all(|c| {
                let at_cap = self.counts.iter().filter(|v| self.cap[c] > self.floor[c] && v[c] == self.cap[c]).count();
                at_cap <= self.ceil_slots[c]
            })
        }

        fn run(&mut self, i: usize) -> bool {
            self.nodes += 1;
            if self.nodes > REPAIR_NODE_BUDGET {
                return false;
            }
            if i == self.patients.len() {
                return self.counts.iter().all(|v| v[0] >= self.floor[0] && v[1] >= self.floor[1]);
            }
            let p = self.patients[i].counts;
            let mut tried: Vec<[usize; 2]> = Vec::new();
            for f in 0..self.k {
                let c = self.counts[f];
                if c[0] + p[0] > self.cap[0] || c[1] + p[1] > self.cap[1] || tried.contains(&c) {
                    continue;
                }
                tried.push(c);
                self.counts[f] = [c[0] + p[0], c[1] + p[1]];
                if self.feasible() {
                    self.assign.push(f);
                    if self.run(i + 1) {
                        return true;
                    }
                    self.assign.pop();
                }
                self.counts[f] = c;
            }
            false
        }
    }

    let mut search = Search {
        patients,
        k,
        cap,
        floor,
        ceil_slots,
        counts: vec![[0, 0]; k],
        assign: Vec::with_capacity(patients.len()),
        nodes: 0,
    };
    search.run(0).then_some(search.assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_lesion_patients(malignant: usize, benign: usize) -> Vec<LesionRef> {
        (0..malignant + benign)
            .map(|i| LesionRef {
                lesion_id: format!("L{i:03}"),
                patient_id: format!("P{i:03}"),
                label: if i < malignant { Label::Malignant } else { Label::Benign },
            })
            .collect()
    }

    fn class_counts(a: &FoldAssignment, lesions: &[LesionRef]) -> Vec<[usize; 2]> {
        let mut counts = vec![[0; 2]; a.k];
        for l in lesions {
            counts[a.fold_of(&l.lesion_id).unwrap()][class_index(l.label)] += 1;
        }
        counts
    }

    #[test]
    fn imbalanced_94_157_split() {
        let lesions = single_lesion_patients(94, 157);
        let a = assign_folds(&lesions, 5, 42).unwrap();
        let mut sizes = a.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![50, 50, 50, 50, 51]);
        for c in class_counts(&a, &lesions) {
            assert!(c[0] == 18 || c[0] == 19);
        }
    }

    #[test]
    fn patient_lesions_share_fold() {
        let mut lesions = single_lesion_patients(6, 6);
        lesions.push(LesionRef {
            lesion_id: "X1".into(),
            patient_id: "P003".into(),
            label: Label::Benign,
        });
        let a = assign_folds(&lesions, 3, 1).unwrap();
        assert_eq!(a.fold_of("X1"), a.fold_of("L003"));
    }

    #[test]
    fn too_few_patients() {
        let lesions = single_lesion_patients(2, 10);
        assert!(matches!(assign_folds(&lesions, 3, 0), Err(Error::Invalid(_))));
        assert!(assign_folds(&lesions, 1, 0).is_err());
    }

    #[test]
    fn seed_is_deterministic() {
        let lesions = single_lesion_patients(20, 31);
        assert_eq!(assign_folds(&lesions, 5, 9).unwrap(), assign_folds(&lesions, 5, 9).unwrap());
    }
}
