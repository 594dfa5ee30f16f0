use crate::autodiff::{Tape, Var};

/// Standard LSTM recursion. `wx` is (4u × in), `wh` is (4u × u), `b` is 4u
/// with gate order input, forget, cell, output. Returns (h', c').
pub(crate) fn lstm_step(
    tape: &mut Tape,
    wx: Var,
    wh: Var,
    b: Var,
    x: Var,
    h: Var,
    c: Var,
    units: usize,
) -> (Var, Var) {
    let gx = tape.matvec(wx, x);
    let gh = tape.matvec(wh, h);
    let pre0 = tape.add(gx, gh);
    let pre = tape.add(pre0, b);
    let i_pre = tape.slice(pre, 0, units);
    let f_pre = tape.slice(pre, units, units);
    let g_pre = tape.slice(pre, 2 * units, units);
    let o_pre = tape.slice(pre, 3 * units, units);
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_new = tape.add(fc, ig);
    let c_act = tape.tanh(c_new);
    let h_new = tape.mul(o, c_act);
    (h_new, c_new)
}
