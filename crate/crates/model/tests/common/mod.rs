//! Shared test plumbing: a finite-difference oracle over parameters held
//! inside model structs. The numeric side only re-runs the caller's
//! inference forward; it never touches the tape's backward rules.

use mm_tensor::{GradMap, Param};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference check of `grads` against `loss_of` for every
/// component of every parameter `filter` matches (all when empty).
/// Returns `(max_rel_err, description_of_worst)`.
pub fn fd_check<S>(
    state: &mut S,
    params_of: impl Fn(&mut S) -> Vec<&mut Param>,
    loss_of: impl Fn(&S) -> f64,
    grads: &GradMap,
    filter: &[&str],
    step: f64,
) -> (f64, String) {
    let names: Vec<String> = {
        let ps = params_of(state);
        ps.iter()
            .map(|p| p.name.clone())
            .filter(|n| filter.is_empty() || filter.iter().any(|f| n.contains(f)))
            .collect()
    };
    let mut max_rel = 0.0f64;
    let mut worst = String::from("(none)");
    for name in names {
        let numel = {
            let mut ps = params_of(state);
            ps.iter_mut().find(|p| p.name == name).expect("param exists").value.numel()
        };
        let analytic = grads.get(&name).cloned();
        for j in 0..numel {
            let orig = set_component(state, &params_of, &name, j, None);
            set_component(state, &params_of, &name, j, Some(orig + step));
            let up = loss_of(state);
            set_component(state, &params_of, &name, j, Some(orig - step));
            let down = loss_of(state);
            set_component(state, &params_of, &name, j, Some(orig));
            let fd = (up - down) / (2.0 * step);
            let ad = analytic.as_ref().map_or(0.0, |t| t.data()[j]);
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{j}]: ad {ad:+.6e} fd {fd:+.6e}");
            }
        }
    }
    (max_rel, worst)
}

/// Reads (value `None`) or writes one component of a named parameter.
fn set_component<S>(
    state: &mut S,
    params_of: &impl Fn(&mut S) -> Vec<&mut Param>,
    name: &str,
    j: usize,
    value: Option<f64>,
) -> f64 {
    let mut ps = params_of(state);
    let p = ps.iter_mut().find(|p| p.name == name).expect("param exists");
    let old = p.value.data()[j];
    if let Some(v) = value {
        p.value = p.value.with_value_at(j, v).expect("finite perturbation");
    }
    old
}
