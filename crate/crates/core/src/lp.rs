//! Convex-hull membership of a distribution, decided by a phase-one simplex.

use alloc::vec;
use alloc::vec::Vec;

use crate::dist::Dist;
use crate::ids::ActionId;
use crate::num::Prob;

/// Pivot and feasibility slack; zero in exact mode.
fn tol<T: Prob>() -> T {
    if T::EXACT {
        T::zero()
    } else {
        T::from_f64(1e-12)
    }
}

fn feasibility_tol<T: Prob>() -> T {
    if T::EXACT {
        T::zero()
    } else {
        T::eps()
    }
}

/// Finds `x ≥ 0` with `A x = b` (requires `b ≥ 0`), or `None` if infeasible.
///
/// Phase one of the simplex method with one artificial variable per row and
/// Bland's rule against cycling.
pub fn feasible_point<T: Prob>(a: &[Vec<T>], b: &[T]) -> Option<Vec<T>> {
    let rows = a.len();
    let cols = a.first().map_or(0, |r| r.len());
    let width = cols + rows + 1;
    let rhs = width - 1;
    let mut tab: Vec<Vec<T>> = Vec::with_capacity(rows + 1);
    for (i, row) in a.iter().enumerate() {
        let mut line = vec![T::zero(); width];
        let flip = b[i] < T::zero();
        for (j, v) in row.iter().enumerate() {
            line[j] = if flip { -v.clone() } else { v.clone() };
        }
        line[cols + i] = T::one();
        line[rhs] = if flip { -b[i].clone() } else { b[i].clone() };
        tab.push(line);
    }
    // objective row: reduced costs of minimizing the sum of artificials
    let mut obj = vec![T::zero(); width];
    for line in &tab {
        for j in 0..cols {
            obj[j] = obj[j].clone() - line[j].clone();
        }
        obj[rhs] = obj[rhs].clone() - line[rhs].clone();
    }
    tab.push(obj);
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let eps = tol::<T>();
    loop {
        let entering = (0..cols + rows).find(|&j| tab[rows][j] < -eps.clone());
        let Some(col) = entering else { break };
        let mut pivot: Option<(usize, T)> = None;
        for i in 0..rows {
            if tab[i][col] > eps {
                let ratio = tab[i][rhs].clone() / tab[i][col].clone();
                let better = match &pivot {
                    None => true,
                    Some((r, best)) => ratio < *best || (ratio == *best && basis[i] < basis[*r]),
                };
                if better {
                    pivot = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = pivot else { break };
        let inv = T::one() / tab[row][col].clone();
        for v in tab[row].iter_mut() {
            *v = v.clone() * inv.clone();
        }
        for i in 0..=rows {
            if i == row || tab[i][col].is_zero() {
                continue;
            }
            let factor = tab[i][col].clone();
            for j in 0..width {
                let delta = factor.clone() * tab[row][j].clone();
                tab[i][j] = tab[i][j].clone() - delta;
            }
        }
        basis[row] = col;
    }
    let infeasibility = -tab[rows][rhs].clone();
    if infeasibility > feasibility_tol::<T>() {
        return None;
    }
    let mut x = vec![T::zero(); cols];
    for (i, &var) in basis.iter().enumerate() {
        if var < cols {
            x[var] = tab[i][rhs].clone();
        }
    }
    Some(x)
}

/// Weights `(λ per member of D, μ per safe action)` writing `d` as a convex
/// combination of `D ∪ {1_α | α ∈ safe}`, if one exists.
pub fn convex_weights<T: Prob>(d: &Dist<T>, members: &[&Dist<T>], safe: &[ActionId]) -> Option<(Vec<T>, Vec<T>)> {
    let mut actions: Vec<ActionId> = d.support().collect();
    for m in members {
        actions.extend(m.support());
    }
    actions.extend_from_slice(safe);
    actions.sort();
    actions.dedup();
    let cols = members.len() + safe.len();
    let mut a: Vec<Vec<T>> = Vec::with_capacity(actions.len() + 1);
    let mut b: Vec<T> = Vec::with_capacity(actions.len() + 1);
    for &act in &actions {
        let mut row = vec![T::zero(); cols];
        for (i, m) in members.iter().enumerate() {
            row[i] = m.prob(act);
        }
        for (k, &s) in safe.iter().enumerate() {
            if s == act {
                row[members.len() + k] = T::one();
            }
        }
        a.push(row);
        b.push(d.prob(act));
    }
    a.push(vec![T::one(); cols]);
    b.push(T::one());
    let x = feasible_point(&a, &b)?;
    let mu = x[members.len()..].to_vec();
    let mut lambda = x;
    lambda.truncate(members.len());
    Some((lambda, mu))
}

/// `d ∈ conv(D ∪ Δ(safe))`.
pub fn convex_member<T: Prob>(d: &Dist<T>, members: &[&Dist<T>], safe: &[ActionId]) -> bool {
    if d.supported_within(safe) || members.iter().any(|m| m.same_as(d)) {
        return true;
    }
    let covered = |a: ActionId| safe.contains(&a) || members.iter().any(|m| m.contains(a));
    if !d.support().all(covered) {
        return false;
    }
    convex_weights(d, members, safe).is_some()
}
