//! Exact 0/1 knapsack over integer energy budgets.

use crate::error::{Error, Result};

/// Tasks with a value `utilities[k]` and an integer energy cost `costs[k]`,
/// and an energy budget.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    pub utilities: Vec<f64>,
    pub costs: Vec<usize>,
    pub budget: usize,
}

impl KnapsackInstance {
    pub fn new(utilities: Vec<f64>, costs: Vec<usize>, budget: usize) -> Result<Self> {
        let inst = Self {
            utilities,
            costs,
            budget,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.utilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utilities.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.utilities.len() != self.costs.len() {
            v.push(format!(
                "{} utilities but {} costs",
                self.utilities.len(),
                self.costs.len()
            ));
        }
        for (k, u) in self.utilities.iter().enumerate() {
            if !(u.is_finite() && *u >= 0.0) {
                v.push(format!("utility of task {k} must be finite and >= 0 (got {u})"));
            }
        }
        for (k, c) in self.costs.iter().enumerate() {
            if *c == 0 {
                v.push(format!("cost of task {k} must be >= 1"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Sum of utilities of `chosen`, added in ascending task order.
    pub fn value_of(&self, chosen: &[usize]) -> f64 {
        let mut sorted = chosen.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&k| self.utilities[k]).sum()
    }

    pub fn cost_of(&self, chosen: &[usize]) -> usize {
        chosen.iter().map(|&k| self.costs[k]).sum()
    }
}

/// Best achievable value and the chosen tasks (ascending, 0-based).
///
/// Among optimal sets the lexicographically smallest index sequence is
/// returned, where a proper prefix orders before its extensions.
pub fn knapsack_optimal(inst: &KnapsackInstance) -> Result<(f64, Vec<usize>)> {
    inst.validate()?;
    let n = inst.len();
    let m = inst.budget;
    // best[k][b]: optimum over tasks k.. with budget b.
    let mut best = vec![vec![0.0f64; m + 1]; n + 1];
    for k in (0..n).rev() {
        for b in 0..=m {
            let skip = best[k + 1][b];
            best[k][b] = if inst.costs[k] <= b {
                skip.max(inst.utilities[k] + best[k + 1][b - inst.costs[k]])
            } else {
                skip
            };
        }
    }

    let mut chosen = Vec::new();
    let (mut k, mut b) = (0, m);
    while best[k][b] > 0.0 {
        let target = best[k][b];
        let j = (k..n)
            .find(|&j| inst.costs[j] <= b && inst.utilities[j] + best[j + 1][b - inst.costs[j]] == target)
            .expect("dynamic-programming table is consistent");
        chosen.push(j);
        b -= inst.costs[j];
        k = j + 1;
    }
    Ok((inst.value_of(&chosen), chosen))
}

/// Exhaustive search with the same tie rule; exponential in the task count.
pub fn knapsack_brute_force(inst: &KnapsackInstance) -> Result<(f64, Vec<usize>)> {
    inst.validate()?;
    let n = inst.len();
    if n >= 31 {
        return Err(Error::invalid("brute force is limited to 30 tasks"));
    }
    let mut best: (f64, Vec<usize>) = (0.0, Vec::new());
    for mask in 1u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
        if inst.cost_of(&set) > inst.budget {
            continue;
        }
        let value = inst.value_of(&set);
        if value > best.0 || (value == best.0 && set < best.1) {
            best = (value, set);
        }
    }
    Ok(best)
}
