use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::NumericsError;

/// Parameter handles of one gated recurrent unit.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wh: ParamId,
    uh: ParamId,
    bh: ParamId,
}

/// The cell's weights loaded onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wh: Var,
    uh: Var,
    bh: Var,
}

const SUFFIXES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"];

impl GruParams {
    /// Registers `<prefix>.{wz,uz,bz,wr,ur,br,wh,uh,bh}` with Xavier weights
    /// and zero biases.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<GruParams, NumericsError> {
        for gate in ["z", "r", "h"] {
            store.add_xavier(
                &format!("{prefix}.w{gate}"),
                hidden,
                input,
                input,
                hidden,
                rng,
            )?;
            store.add_xavier(
                &format!("{prefix}.u{gate}"),
                hidden,
                hidden,
                hidden,
                hidden,
                rng,
            )?;
            store.add_zeros(&format!("{prefix}.b{gate}"), hidden, 1)?;
        }
        Self::lookup(store, prefix)
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<GruParams, NumericsError> {
        let ids: Vec<ParamId> = SUFFIXES
            .iter()
            .map(|s| store.id(&format!("{prefix}.{s}")))
            .collect::<Result<_, _>>()?;
        let (hidden, input) = store.value(ids[0]).shape();
        Ok(GruParams {
            input,
            hidden,
            wz: ids[0],
            uz: ids[1],
            bz: ids[2],
            wr: ids[3],
            ur: ids[4],
            br: ids[5],
            wh: ids[6],
            uh: ids[7],
            bh: ids[8],
        })
    }

    pub fn load(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        GruVars {
            wz: tape.param(store, self.wz),
            uz: tape.param(store, self.uz),
            bz: tape.param(store, self.bz),
            wr: tape.param(store, self.wr),
            ur: tape.param(store, self.ur),
            br: tape.param(store, self.br),
            wh: tape.param(store, self.wh),
            uh: tape.param(store, self.uh),
            bh: tape.param(store, self.bh),
        }
    }
}

/// One GRU update:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_step(tape: &mut Tape, w: &GruVars, x: Var, h: Var) -> Result<Var, NumericsError> {
    let z = gate(tape, w.wz, x, w.uz, h, w.bz)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, w.wr, x, w.ur, h, w.br)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let cand = gate(tape, w.wh, x, w.uh, rh, w.bh)?;
    let cand = tape.tanh(cand);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

fn gate(tape: &mut Tape, w: Var, x: Var, u: Var, h: Var, b: Var) -> Result<Var, NumericsError> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    tape.add_n(&[wx, uh, b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(input: usize, hidden: usize) -> (ParamStore, GruParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let p = GruParams::init(&mut s, "g", input, hidden, &mut rng).unwrap();
        (s, p)
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (mut s, p) = store(3, 4);
        for id in s.ids().collect::<Vec<_>>() {
            s.value_mut(id).fill(0.0);
        }
        let mut t = Tape::new();
        let w = p.load(&mut t, &s);
        let x = t.vector(&[0.3, -2.0, 1.0]);
        let h = t.vector(&[1.0, -0.5, 0.25, 2.0]);
        let out = gru_step(&mut t, &w, x, h).unwrap();
        assert_eq!(t.value(out), &[0.5, -0.25, 0.125, 1.0]);
    }

    #[test]
    fn closed_update_gate_keeps_state_exactly() {
        let (mut s, p) = store(2, 3);
        let bz = s.id("g.bz").unwrap();
        *s.value_mut(bz) = Matrix::column(&[-1e308, -1e308, -1e308]).unwrap();
        let wz = s.id("g.wz").unwrap();
        s.value_mut(wz).fill(0.0);
        let uz = s.id("g.uz").unwrap();
        s.value_mut(uz).fill(0.0);
        let mut t = Tape::new();
        let w = p.load(&mut t, &s);
        let x = t.vector(&[0.7, -0.1]);
        let hv = [0.123, -4.5, 9.75];
        let h = t.vector(&hv);
        let out = gru_step(&mut t, &w, x, h).unwrap();
        assert_eq!(t.value(out), &hv);
    }

    #[test]
    fn paper_width() {
        let (s, p) = store(256, 256);
        let mut t = Tape::new();
        let w = p.load(&mut t, &s);
        let x = t.zeros(256, 1);
        let h = t.zeros(256, 1);
        let out = gru_step(&mut t, &w, x, h).unwrap();
        assert_eq!(t.shape(out), (256, 1));
    }

    #[test]
    fn wrong_widths_fail() {
        let (s, p) = store(3, 4);
        let mut t = Tape::new();
        let w = p.load(&mut t, &s);
        let x = t.zeros(2, 1);
        let h = t.zeros(4, 1);
        assert!(gru_step(&mut t, &w, x, h).is_err());
    }
}
