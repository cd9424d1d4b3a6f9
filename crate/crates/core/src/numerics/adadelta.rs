use super::params::ParamStore;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;

/// One Adadelta step over every parameter, with the update multiplied by
/// `lr_scale`. Gradients are zeroed afterwards.
///
/// Per element:
/// `E[g²] ← ρE[g²] + (1−ρ)g²`,
/// `Δx = −lr_scale · √(E[Δx²]+ε)/√(E[g²]+ε) · g`,
/// `E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²`, `x ← x + Δx`.
pub fn adadelta_update(store: &mut ParamStore, rho: f64, eps: f64, lr_scale: f64) {
    for p in store.iter_mut() {
        let grad = p.grad.as_mut_slice();
        let value = p.value.as_mut_slice();
        let sq_grad = p.sq_grad.as_mut_slice();
        let sq_delta = p.sq_delta.as_mut_slice();
        for i in 0..grad.len() {
            let g = grad[i];
            sq_grad[i] = rho * sq_grad[i] + (1.0 - rho) * g * g;
            let delta = -lr_scale * ((sq_delta[i] + eps).sqrt() / (sq_grad[i] + eps).sqrt()) * g;
            sq_delta[i] = rho * sq_delta[i] + (1.0 - rho) * delta * delta;
            value[i] += delta;
            grad[i] = 0.0;
        }
    }
}
