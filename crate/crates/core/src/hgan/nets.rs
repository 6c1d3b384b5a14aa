//! Network wiring: small MLPs for airfoils, upsample+conv stacks for
//! metasurface fields. Parameter ids index into the owning [`ParamSet`]s and
//! are stable because construction order is fixed.

use crate::dataset::DesignKind;
use crate::hgan::PriorConfig;
use crate::Result;
use duq_autodiff::{ConvSpec, Graph, ParamId, ParamSet, Tensor, Value};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const AIRFOIL_DIM: usize = 384;
const FIELD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn init(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let std = std_scale / (in_dim as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let w = params.add(
            format!("{name}.w"),
            Tensor::matrix(in_dim, out_dim, data).expect("init shape"),
        );
        let b = params.add(format!("{name}.b"), Tensor::matrix(1, out_dim, vec![0.0; out_dim]).expect("init shape"));
        Self { w, b }
    }

    fn forward(&self, g: &mut Graph, leaves: &[Value], x: Value) -> Result<Value> {
        let z = g.matmul(x, leaves[self.w.index()])?;
        Ok(g.add(z, leaves[self.b.index()])?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

impl Conv {
    fn init(params: &mut ParamSet, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..spec.out_channels * fan_in)
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let w = params.add(
            format!("{name}.w"),
            Tensor::matrix(spec.out_channels, fan_in, data).expect("init shape"),
        );
        let b = params.add(
            format!("{name}.b"),
            Tensor::vector(vec![0.0; spec.out_channels]),
        );
        Self { w, b, spec }
    }

    fn forward(&self, g: &mut Graph, leaves: &[Value], x: Value) -> Result<Value> {
        Ok(g.conv2d(x, leaves[self.w.index()], leaves[self.b.index()], self.spec)?)
    }
}

fn conv_spec(in_c: usize, out_c: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        in_channels: in_c,
        out_channels: out_c,
        kernel: 3,
        stride,
        pad: 1,
    }
}

/// Fixed decode layer for airfoil outputs: a `[1,2,1]/4` moving average
/// applied twice along the point sequence to both coordinates (clamped at
/// the ends), as a constant `[384, 384]` matrix acting on the flat
/// `[x0,y0,x1,y1,...]` layout. Surface points are a discretized curve;
/// forcing the decoded curve to be locally smooth keeps the generator from
/// spending capacity on point-to-point grain that no fabrication process
/// produces.
fn airfoil_smoothing_matrix() -> Tensor {
    let n = AIRFOIL_DIM;
    let points = n / 2;
    // One smoothing pass over the point lattice.
    let mut pass = vec![0.0; points * points];
    for k in 0..points {
        let lo = k.saturating_sub(1);
        let hi = (k + 1).min(points - 1);
        pass[k * points + lo] += 0.25;
        pass[k * points + k] += 0.5;
        pass[k * points + hi] += 0.25;
    }
    // Two passes composed.
    let mut twice = vec![0.0; points * points];
    for i in 0..points {
        for j in 0..points {
            let mut acc = 0.0;
            for m in 0..points {
                acc += pass[i * points + m] * pass[m * points + j];
            }
            twice[i * points + j] = acc;
        }
    }
    // Embed into the interleaved layout; output = input * S with S[in][out].
    let mut s = vec![0.0; n * n];
    for k in 0..points {
        for j in 0..points {
            let w = twice[j * points + k];
            s[(2 * k) * n + 2 * j] = w;
            s[(2 * k + 1) * n + (2 * j + 1)] = w;
        }
    }
    Tensor::matrix(n, n, s).expect("smoothing matrix shape")
}

/// Generator wiring.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum GenArch {
    /// `[input -> 256 -> 512 -> 384]`, tanh output through the fixed
    /// smoothing decode layer, reshaped to 192x2.
    Airfoil {
        l1: Linear,
        l2: Linear,
        l3: Linear,
        smooth: Tensor,
    },
    /// MLP to 8x16x16, then two (bilinear 2x upsample, 3x3 conv) stages up
    /// to 1x64x64, tanh output.
    Metasurface {
        l1: Linear,
        l2: Linear,
        c1: Conv,
        c2: Conv,
    },
}

impl GenArch {
    pub(crate) fn build(
        kind: DesignKind,
        priors: &PriorConfig,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Self {
        let input = priors.input_dim();
        match kind {
            DesignKind::Airfoil => GenArch::Airfoil {
                l1: Linear::init(params, "gen.l1", input, 256, 2.0f64.sqrt(), rng),
                l2: Linear::init(params, "gen.l2", 256, 512, 2.0f64.sqrt(), rng),
                l3: Linear::init(params, "gen.l3", 512, AIRFOIL_DIM, 1.0, rng),
                smooth: airfoil_smoothing_matrix(),
            },
            DesignKind::Metasurface => GenArch::Metasurface {
                l1: Linear::init(params, "gen.l1", input, 256, 2.0f64.sqrt(), rng),
                l2: Linear::init(params, "gen.l2", 256, 8 * 16 * 16, 2.0f64.sqrt(), rng),
                c1: Conv::init(params, "gen.c1", conv_spec(8, 8, 1), rng),
                c2: Conv::init(params, "gen.c2", conv_spec(8, 1, 1), rng),
            },
        }
    }

    /// Forward over an assembled `[batch, parent+child+noise]` input.
    pub(crate) fn forward(&self, g: &mut Graph, leaves: &[Value], x: Value) -> Result<Value> {
        match self {
            GenArch::Airfoil { l1, l2, l3, smooth } => {
                let h = l1.forward(g, leaves, x)?;
                let h = g.relu(h);
                let h = l2.forward(g, leaves, h)?;
                let h = g.relu(h);
                let out = l3.forward(g, leaves, h)?;
                let out = g.tanh(out);
                let s = g.constant(smooth.clone());
                Ok(g.matmul(out, s)?)
            }
            GenArch::Metasurface { l1, l2, c1, c2 } => {
                let batch = g.value(x).shape()[0];
                let h = l1.forward(g, leaves, x)?;
                let h = g.relu(h);
                let h = l2.forward(g, leaves, h)?;
                let h = g.relu(h);
                let h = g.reshape(h, vec![batch, 8, 16, 16])?;
                let h = g.upsample2x(h)?;
                let h = c1.forward(g, leaves, h)?;
                let h = g.relu(h);
                let h = g.upsample2x(h)?;
                let h = c2.forward(g, leaves, h)?;
                let h = g.tanh(h);
                Ok(g.reshape(h, vec![batch, FIELD * FIELD])?)
            }
        }
    }
}

/// Discriminator forward output. Auxiliary heads are only evaluated when the
/// q leaves are supplied (the pure discriminator step skips them).
pub(crate) struct DiscOut {
    pub logit: Value,
    pub q_parent: Option<Value>,
    pub q_child: Option<Value>,
}

/// Discriminator wiring: a trunk over the concatenated (nominal, fabricated)
/// pair, a scalar decision head, and auxiliary code heads sharing the trunk.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum DiscArch {
    Airfoil {
        t1: Linear,
        t2: Linear,
        t3: Linear,
        d_head: Linear,
        q_parent: Linear,
        q_child: Linear,
    },
    Metasurface {
        c1: Conv,
        c2: Conv,
        c3: Conv,
        t: Linear,
        d_head: Linear,
        q_parent: Linear,
        q_child: Linear,
    },
}

impl DiscArch {
    pub(crate) fn build(
        kind: DesignKind,
        priors: &PriorConfig,
        disc_params: &mut ParamSet,
        q_params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Self {
        let root2 = 2.0f64.sqrt();
        match kind {
            DesignKind::Airfoil => DiscArch::Airfoil {
                t1: Linear::init(disc_params, "disc.t1", 2 * AIRFOIL_DIM, 384, root2, rng),
                t2: Linear::init(disc_params, "disc.t2", 384, 256, root2, rng),
                t3: Linear::init(disc_params, "disc.t3", 256, 128, root2, rng),
                d_head: Linear::init(disc_params, "disc.d", 128, 1, 1.0, rng),
                q_parent: Linear::init(q_params, "q.parent", 128, priors.parent_dim, 1.0, rng),
                q_child: Linear::init(q_params, "q.child", 128, priors.child_dim, 1.0, rng),
            },
            DesignKind::Metasurface => DiscArch::Metasurface {
                c1: Conv::init(disc_params, "disc.c1", conv_spec(2, 8, 2), rng),
                c2: Conv::init(disc_params, "disc.c2", conv_spec(8, 16, 2), rng),
                c3: Conv::init(disc_params, "disc.c3", conv_spec(16, 16, 2), rng),
                t: Linear::init(disc_params, "disc.t", 16 * 8 * 8, 128, root2, rng),
                d_head: Linear::init(disc_params, "disc.d", 128, 1, 1.0, rng),
                q_parent: Linear::init(q_params, "q.parent", 128, priors.parent_dim, 1.0, rng),
                q_child: Linear::init(q_params, "q.child", 128, priors.child_dim, 1.0, rng),
            },
        }
    }

    /// Forward over normalized `[batch, dim]` nominal and fabricated inputs.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        d_leaves: &[Value],
        q_leaves: Option<&[Value]>,
        nom: Value,
        fab: Value,
    ) -> Result<DiscOut> {
        match self {
            DiscArch::Airfoil {
                t1,
                t2,
                t3,
                d_head,
                q_parent,
                q_child,
            } => {
                let x = g.concat(&[nom, fab], 1)?;
                let h = t1.forward(g, d_leaves, x)?;
                let h = g.relu(h);
                let h = t2.forward(g, d_leaves, h)?;
                let h = g.relu(h);
                let h = t3.forward(g, d_leaves, h)?;
                let feat = g.relu(h);
                let logit = d_head.forward(g, d_leaves, feat)?;
                let (q_parent, q_child) = match q_leaves {
                    Some(ql) => (
                        Some(q_parent.forward(g, ql, feat)?),
                        Some(q_child.forward(g, ql, feat)?),
                    ),
                    None => (None, None),
                };
                Ok(DiscOut {
                    logit,
                    q_parent,
                    q_child,
                })
            }
            DiscArch::Metasurface {
                c1,
                c2,
                c3,
                t,
                d_head,
                q_parent,
                q_child,
            } => {
                let batch = g.value(nom).shape()[0];
                let nom = g.reshape(nom, vec![batch, 1, FIELD, FIELD])?;
                let fab = g.reshape(fab, vec![batch, 1, FIELD, FIELD])?;
                let x = g.concat(&[nom, fab], 1)?;
                let h = c1.forward(g, d_leaves, x)?;
                let h = g.relu(h);
                let h = c2.forward(g, d_leaves, h)?;
                let h = g.relu(h);
                let h = c3.forward(g, d_leaves, h)?;
                let h = g.relu(h);
                let h = g.reshape(h, vec![batch, 16 * 8 * 8])?;
                let h = t.forward(g, d_leaves, h)?;
                let feat = g.relu(h);
                let logit = d_head.forward(g, d_leaves, feat)?;
                let (q_parent, q_child) = match q_leaves {
                    Some(ql) => (
                        Some(q_parent.forward(g, ql, feat)?),
                        Some(q_child.forward(g, ql, feat)?),
                    ),
                    None => (None, None),
                };
                Ok(DiscOut {
                    logit,
                    q_parent,
                    q_child,
                })
            }
        }
    }
}
