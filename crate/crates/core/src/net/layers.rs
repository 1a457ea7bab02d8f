use crate::autograd::{Element, Graph, Var};
use crate::error::Result;
use crate::params::{Binder, ParamStore};

/// Convolution with "same" padding for odd kernels. Uses `<name>.b` when
/// the store has it.
pub fn conv<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(g, &format!("{name}.w"))?;
    let k = g.shape(w)[2];
    let bname = format!("{name}.b");
    let b = if p.store.contains(&bname) { Some(p.var(g, &bname)?) } else { None };
    g.conv2d(x, w, b, stride, k / 2)
}

pub fn conv_relu<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    g.relu(y)
}

pub fn init_residual<S: Element>(store: &mut ParamStore<S>, seed: u64, name: &str, cin: usize, cout: usize, stride: usize) {
    store.init_conv(seed, &format!("{name}.conv1"), cin, cout, 3, true);
    store.init_conv(seed, &format!("{name}.conv2"), cout, cout, 3, true);
    if stride != 1 || cin != cout {
        store.init_conv(seed, &format!("{name}.skip"), cin, cout, 1, true);
    }
}

/// `relu(skip(x) + conv2(relu(conv1(x))))`, with a strided 1x1 projection
/// as the skip path when the shape changes.
pub fn residual<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let h = conv_relu(g, p, &format!("{name}.conv1"), x, stride)?;
    let h = conv(g, p, &format!("{name}.conv2"), h, 1)?;
    let skip_name = format!("{name}.skip");
    let skip = if p.store.contains(&format!("{skip_name}.w")) {
        conv(g, p, &skip_name, x, stride)?
    } else {
        x
    };
    let s = g.add(skip, h)?;
    g.relu(s)
}
