use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BranchKind, BranchSpec, ModelConfig, StageSpec};
use crate::autodiff::{Eval, Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::resize::resize;
use crate::tensor::{self, Real, Tensor4};

/// Parameter handles of one conv layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct BranchLayout {
    pub kind: BranchKind,
    pub conv1: ConvIds,
    pub conv2: ConvIds,
}

#[derive(Clone, Debug)]
pub enum StageLayout {
    Plain(ConvIds),
    Split {
        upper: BranchLayout,
        lower: BranchLayout,
        merge_and_run: bool,
    },
}

#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub stages: Vec<StageLayout>,
    pub merge: ConvIds,
}

/// Every conv layer of the network, in parameter order.
#[derive(Clone, Debug)]
pub struct Layout {
    pub fen: [ConvIds; 3],
    pub blocks: Vec<BlockLayout>,
    pub gff: [ConvIds; 2],
    pub upscale: Vec<(ConvIds, usize)>,
    pub recover: ConvIds,
}

/// Descriptor handed to a layout visitor for each conv layer.
pub struct ConvSpec<'a> {
    pub name: &'a str,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl ConvSpec<'_> {
    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn scalar_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

impl Layout {
    /// Walks the topology of `cfg` in parameter order, asking `visit` for the
    /// handles of each conv layer.
    pub fn walk<F>(cfg: &ModelConfig, mut visit: F) -> Result<Self>
    where
        F: FnMut(&ConvSpec<'_>) -> Result<ConvIds>,
    {
        let c = cfg.channels;
        let half = c / 2;
        let mut conv = |name: &str, out, inp, k| {
            visit(&ConvSpec {
                name,
                out_channels: out,
                in_channels: inp,
                kernel: k,
            })
        };

        let fen = [
            conv("fen.conv1", c, cfg.in_channels, 3)?,
            conv("fen.conv2", c, c, 1)?,
            conv("fen.conv3", c, c, 3)?,
        ];

        let mut blocks = Vec::with_capacity(cfg.n);
        for i in 0..cfg.n {
            let mut stages = Vec::with_capacity(cfg.m);
            for j in 0..cfg.m {
                let prefix = format!("csb.{i}.stage.{j}");
                let stage = match cfg.variant.stage() {
                    StageSpec::Plain => StageLayout::Plain(conv(&format!("{prefix}.conv"), c, c, 3)?),
                    StageSpec::Split {
                        upper,
                        lower,
                        merge_and_run,
                    } => {
                        let mut branch = |side: &str, spec: BranchSpec| -> Result<BranchLayout> {
                            let k = spec.kernel;
                            let (mid, second_in) = match spec.kind {
                                BranchKind::Residual => (half, half),
                                BranchKind::Dense => (cfg.growth, half + cfg.growth),
                            };
                            Ok(BranchLayout {
                                kind: spec.kind,
                                conv1: conv(&format!("{prefix}.{side}.conv1"), mid, half, k)?,
                                conv2: conv(&format!("{prefix}.{side}.conv2"), half, second_in, k)?,
                            })
                        };
                        StageLayout::Split {
                            upper: branch("upper", upper)?,
                            lower: branch("lower", lower)?,
                            merge_and_run,
                        }
                    }
                };
                stages.push(stage);
            }
            let merge = conv(&format!("csb.{i}.merge"), c, c, 1)?;
            blocks.push(BlockLayout { stages, merge });
        }

        let gff = [
            conv("gff.conv1", c, (cfg.n + 1) * c, 1)?,
            conv("gff.conv2", c, c, 3)?,
        ];
        let mut upscale = Vec::new();
        for (k, r) in cfg.upscale_factors().into_iter().enumerate() {
            upscale.push((conv(&format!("irn.up.{k}"), c * r * r, c, 3)?, r));
        }
        let recover = conv("irn.recover", cfg.in_channels, c, 3)?;
        Ok(Layout {
            fen,
            blocks,
            gff,
            upscale,
            recover,
        })
    }

    /// Resolves the layout against an existing store, checking every shape.
    pub fn resolve<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let layout = Layout::walk(cfg, |spec| {
            let find = |suffix: &str, dims: &[usize]| -> Result<ParamId> {
                let name = format!("{}.{suffix}", spec.name);
                let id = store
                    .id(&name)
                    .ok_or_else(|| Error::Incompatible(format!("missing parameter `{name}`")))?;
                if store.param(id).dims != dims {
                    return Err(Error::Incompatible(format!(
                        "parameter `{name}` has shape {:?}, expected {dims:?}",
                        store.param(id).dims
                    )));
                }
                Ok(id)
            };
            Ok(ConvIds {
                weight: find("weight", &spec.weight_dims())?,
                bias: find("bias", &[spec.out_channels])?,
            })
        })?;
        let expected = param_count(cfg)?;
        if store.scalar_count() != expected {
            return Err(Error::Incompatible(format!(
                "store holds {} scalars, topology needs {expected}",
                store.scalar_count()
            )));
        }
        Ok(layout)
    }
}

/// Exact number of scalar parameters (weights and biases) of the topology.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let mut total = 0;
    let dummy = ConvIds {
        weight: ParamId(0),
        bias: ParamId(0),
    };
    Layout::walk(cfg, |spec| {
        total += spec.scalar_count();
        Ok(dummy)
    })?;
    Ok(total)
}

pub fn depth(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(cfg.depth())
}

/// The merge-and-run mixing: both outputs are the average of the inputs.
pub fn merge_and_run<T: Real>(top: &Tensor4<T>, bot: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let avg = tensor::scale(&tensor::add(top, bot)?, T::from_f64(0.5));
    Ok((avg.clone(), avg))
}

/// A channel splitting network with its parameters.
#[derive(Clone, Debug)]
pub struct CsnModel<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> CsnModel<T> {
    /// Xavier-uniform weights over each kernel's receptive field, zero
    /// biases. Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::walk(&config, |spec| {
            let k2 = spec.kernel * spec.kernel;
            let bound = (6.0 / ((spec.in_channels + spec.out_channels) * k2) as f64).sqrt();
            let n = spec.out_channels * spec.in_channels * k2;
            let w: Vec<T> = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
            let weight = params.insert(format!("{}.weight", spec.name), &spec.weight_dims(), w)?;
            let bias = params.insert(
                format!("{}.bias", spec.name),
                &[spec.out_channels],
                vec![T::ZERO; spec.out_channels],
            )?;
            Ok(ConvIds { weight, bias })
        })?;
        Ok(Self { config, params, layout })
    }

    /// Wraps an existing store, validating names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self { config, params, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn cast<U: Real>(&self) -> CsnModel<U> {
        CsnModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Inference without recording.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = Eval::new(&self.params);
        self.forward_graph(&mut g, x.clone())
    }

    /// Full network on any [`Graph`]:
    /// features from the extraction convs, the chain of blocks, global
    /// fusion of all block outputs plus the global skip, upscaling, and the
    /// interpolated input added last.
    pub fn forward_graph<G: Graph<T>>(&self, g: &mut G, x: Tensor4<T>) -> Result<G::Value> {
        let cfg = &self.config;
        if x.channels() != cfg.in_channels {
            return Err(Error::shape(
                "CsnModel::forward",
                &x.shape(),
                &[x.batch(), cfg.in_channels, x.height(), x.width()],
            ));
        }
        let esc = match cfg.esc.interpolation() {
            Some(method) => Some(resize(&x, x.height() * cfg.scale, x.width() * cfg.scale, method)?),
            None => None,
        };
        let input = g.constant(x);

        let [c1, c2, c3] = &self.layout.fen;
        let h = g.conv2d(&input, c1.weight, c1.bias)?;
        let h = g.conv2d(&h, c2.weight, c2.bias)?;
        let x0 = g.conv2d(&h, c3.weight, c3.bias)?;

        let mut features = Vec::with_capacity(cfg.n + 1);
        features.push(x0.clone());
        for i in 0..cfg.n {
            let next = self.csb_forward(g, i, features.last().expect("non-empty"))?;
            features.push(next);
        }
        let refs: Vec<&G::Value> = features.iter().collect();
        let fused = g.concat(&refs)?;
        let [f1, f2] = &self.layout.gff;
        let fused = g.conv2d(&fused, f1.weight, f1.bias)?;
        let fused = g.conv2d(&fused, f2.weight, f2.bias)?;
        let mut up = g.add(&fused, &x0)?;

        for (conv, r) in &self.layout.upscale {
            up = g.conv2d(&up, conv.weight, conv.bias)?;
            up = g.pixel_shuffle(&up, *r)?;
        }
        let rc = &self.layout.recover;
        let out = g.conv2d(&up, rc.weight, rc.bias)?;
        match esc {
            Some(e) => {
                let e = g.constant(e);
                g.add(&out, &e)
            }
            None => Ok(out),
        }
    }

    /// Block `index`: split, stage mappings, merge, 1x1 conv, local skip.
    pub fn csb_forward<G: Graph<T>>(&self, g: &mut G, index: usize, x: &G::Value) -> Result<G::Value> {
        let block = self.layout.blocks.get(index).ok_or_else(|| {
            Error::invalid("csb_forward", format!("block {index} out of range"))
        })?;
        let c = self.config.channels;
        if g.tensor(x).channels() != c {
            return Err(Error::shape("csb_forward", &g.tensor(x).shape(), &[c]));
        }
        let merged = match block.stages.first() {
            Some(StageLayout::Plain(_)) => {
                let mut h = x.clone();
                for stage in &block.stages {
                    if let StageLayout::Plain(conv) = stage {
                        h = g.conv2d(&h, conv.weight, conv.bias)?;
                        h = g.relu(&h);
                    }
                }
                h
            }
            _ => {
                let parts = g.split(x, &[c / 2, c / 2])?;
                let (mut top, mut bot) = (parts[0].clone(), parts[1].clone());
                for j in 0..block.stages.len() {
                    (top, bot) = self.stage_mapping(g, index, j, &top, &bot)?;
                }
                g.concat(&[&top, &bot])?
            }
        };
        let out = g.conv2d(&merged, block.merge.weight, block.merge.bias)?;
        g.add(&out, x)
    }

    /// Stage `stage` of block `block`. For split stages returns
    /// `(H_upper(top) + (top+bot)/2, H_lower(bot) + (top+bot)/2)`, without the
    /// averaged terms when merge-and-run is off. Plain stages act on the
    /// concatenated halves and return them split again.
    pub fn stage_mapping<G: Graph<T>>(
        &self,
        g: &mut G,
        block: usize,
        stage: usize,
        top: &G::Value,
        bot: &G::Value,
    ) -> Result<(G::Value, G::Value)> {
        let layout = self
            .layout
            .blocks
            .get(block)
            .and_then(|b| b.stages.get(stage))
            .ok_or_else(|| Error::invalid("stage_mapping", format!("stage {block}.{stage} out of range")))?;
        let half = self.config.channels / 2;
        for v in [top, bot] {
            if g.tensor(v).channels() != half {
                return Err(Error::shape("stage_mapping", &g.tensor(v).shape(), &[half]));
            }
        }
        match layout {
            StageLayout::Plain(conv) => {
                let x = g.concat(&[top, bot])?;
                let h = g.conv2d(&x, conv.weight, conv.bias)?;
                let h = g.relu(&h);
                let parts = g.split(&h, &[half, half])?;
                Ok((parts[0].clone(), parts[1].clone()))
            }
            StageLayout::Split {
                upper,
                lower,
                merge_and_run,
            } => {
                let mut h_top = branch(g, upper, top)?;
                let mut h_bot = branch(g, lower, bot)?;
                if self.config.residual_scale != 1.0 {
                    let s = T::from_f64(self.config.residual_scale);
                    h_top = g.scale(&h_top, s);
                    h_bot = g.scale(&h_bot, s);
                }
                if !merge_and_run {
                    return Ok((h_top, h_bot));
                }
                let sum = g.add(top, bot)?;
                let mix = g.scale(&sum, T::from_f64(0.5));
                Ok((g.add(&h_top, &mix)?, g.add(&h_bot, &mix)?))
            }
        }
    }
}

fn branch<T: Real, G: Graph<T>>(g: &mut G, layout: &BranchLayout, x: &G::Value) -> Result<G::Value> {
    let h = g.conv2d(x, layout.conv1.weight, layout.conv1.bias)?;
    let h = g.relu(&h);
    match layout.kind {
        BranchKind::Residual => g.conv2d(&h, layout.conv2.weight, layout.conv2.bias),
        BranchKind::Dense => {
            let cat = g.concat(&[x, &h])?;
            g.conv2d(&cat, layout.conv2.weight, layout.conv2.bias)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::model::{EscMode, Variant};
    use crate::resize::bicubic_resize;

    fn input(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(shape, |_| rng.gen_range(0.0..1.0))
    }

    /// Closed form of the parameter count for the default widths.
    fn closed_form(cfg: &ModelConfig) -> usize {
        let c = cfg.channels;
        let h = c / 2;
        let g = cfg.growth;
        let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
        let branch = |spec: BranchSpec| match spec.kind {
            BranchKind::Residual => conv(h, h, spec.kernel) * 2,
            BranchKind::Dense => conv(g, h, spec.kernel) + conv(h, h + g, spec.kernel),
        };
        let stage = match cfg.variant.stage() {
            StageSpec::Plain => conv(c, c, 3),
            StageSpec::Split { upper, lower, .. } => branch(upper) + branch(lower),
        };
        let fen = conv(c, cfg.in_channels, 3) + conv(c, c, 1) + conv(c, c, 3);
        let nmn = cfg.n * (cfg.m * stage + conv(c, c, 1));
        let gff = conv(c, (cfg.n + 1) * c, 1) + conv(c, c, 3);
        let up: usize = cfg.upscale_factors().iter().map(|r| conv(c * r * r, c, 3)).sum();
        fen + nmn + gff + up + conv(cfg.in_channels, c, 3)
    }

    #[test]
    fn table_counts() {
        let count = |variant| {
            param_count(&ModelConfig {
                variant,
                ..ModelConfig::default()
            })
            .unwrap()
        };
        assert_eq!(count(Variant::Baseline), 13_643_521);
        assert_eq!(count(Variant::R3D3), 13_646_593);
        assert_eq!(count(Variant::Sp), 13_646_593);
        assert_eq!(count(Variant::R3R5), 22_036_225);
        assert_eq!(count(Variant::D3D5), 22_034_177);
        assert_eq!(count(Variant::R3R3), 13_647_617);
        assert_eq!(count(Variant::D3D3), 13_645_569);
        assert_eq!(count(Variant::R3D5), 22_035_201);
        assert_eq!(count(Variant::R5D3), 22_035_201);
    }

    #[test]
    fn count_matches_closed_form_for_all_shapes() {
        for variant in Variant::ALL {
            for n in 1..=4 {
                for m in 1..=4 {
                    for scale in [2, 3, 4] {
                        let cfg = ModelConfig {
                            n,
                            m,
                            variant,
                            scale,
                            channels: 8,
                            growth: 3,
                            ..ModelConfig::default()
                        };
                        assert_eq!(param_count(&cfg).unwrap(), closed_form(&cfg), "{cfg:?}");
                        let model = CsnModel::<f32>::build(cfg.clone(), 0).unwrap();
                        assert_eq!(model.params.scalar_count(), closed_form(&cfg));
                    }
                }
            }
        }
    }

    #[test]
    fn build_is_deterministic_with_zero_bias() {
        let cfg = ModelConfig::tiny();
        let a = CsnModel::<f32>::build(cfg.clone(), 5).unwrap();
        let b = CsnModel::<f32>::build(cfg.clone(), 5).unwrap();
        let c = CsnModel::<f32>::build(cfg, 6).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        for p in a.params.iter() {
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            } else {
                let k2 = p.dims[2] * p.dims[3];
                let bound = (6.0 / ((p.dims[0] + p.dims[1]) * k2) as f64).sqrt() as f32;
                assert!(p.value.data().iter().all(|v| v.abs() <= bound));
                assert!(p.value.data().iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn output_shapes() {
        for scale in [2, 3, 4] {
            let cfg = ModelConfig {
                scale,
                ..ModelConfig::tiny()
            };
            let model = CsnModel::<f32>::build(cfg, 1).unwrap();
            let y = model.forward(&input([1, 1, 24, 24], 3).cast()).unwrap();
            assert_eq!(y.shape(), [1, 1, 24 * scale, 24 * scale]);
            assert!(y.all_finite());
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let model = CsnModel::<f64>::build(ModelConfig::tiny(), 0).unwrap();
        assert!(model.forward(&input([1, 2, 8, 8], 0)).is_err());
    }

    #[test]
    fn zero_network_reduces_to_interpolation() {
        for scale in [2, 3, 4] {
            let cfg = ModelConfig {
                scale,
                ..ModelConfig::tiny()
            };
            let mut model = CsnModel::<f32>::build(cfg, 2).unwrap();
            model.params.zero_values();
            let x = input([2, 1, 7, 9], 4).cast::<f32>();
            let y = model.forward(&x).unwrap();
            assert_eq!(y, bicubic_resize(&x, 7 * scale, 9 * scale).unwrap());
        }
        let mut none = CsnModel::<f64>::build(
            ModelConfig {
                esc: EscMode::None,
                ..ModelConfig::tiny()
            },
            0,
        )
        .unwrap();
        none.params.zero_values();
        let y = none.forward(&input([1, 1, 5, 5], 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_block_is_passthrough() {
        let mut model = CsnModel::<f64>::build(ModelConfig::tiny(), 3).unwrap();
        let block = model.layout().blocks[0].clone();
        let mut ids = vec![block.merge.weight, block.merge.bias];
        for s in &block.stages {
            if let StageLayout::Split { upper, lower, .. } = s {
                for b in [upper, lower] {
                    ids.extend([b.conv1.weight, b.conv1.bias, b.conv2.weight, b.conv2.bias]);
                }
            }
        }
        for id in ids {
            model.params.value_mut(id).data_mut().fill(0.0);
        }
        let x = input([1, 16, 6, 6], 9);
        let mut g = Eval::new(&model.params);
        let y = model.csb_forward(&mut g, 0, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_branches_average() {
        let mut model = CsnModel::<f64>::build(ModelConfig::tiny(), 3).unwrap();
        model.params.zero_values();
        let top = input([1, 8, 4, 4], 1);
        let bot = input([1, 8, 4, 4], 2);
        let mut g = Eval::new(&model.params);
        let (a, b) = model.stage_mapping(&mut g, 0, 0, &top, &bot).unwrap();
        let (ea, eb) = merge_and_run(&top, &bot).unwrap();
        assert_eq!(a, ea);
        assert_eq!(b, eb);
        let (a, b) = model.stage_mapping(&mut g, 0, 0, &top, &top).unwrap();
        assert_eq!(a, top);
        assert_eq!(b, top);
        assert!(model.stage_mapping(&mut g, 0, 0, &top, &input([1, 7, 4, 4], 0)).is_err());
    }

    #[test]
    fn sp_omits_merge_terms() {
        let mut model = CsnModel::<f64>::build(
            ModelConfig {
                variant: Variant::Sp,
                ..ModelConfig::tiny()
            },
            3,
        )
        .unwrap();
        model.params.zero_values();
        let top = input([1, 8, 4, 4], 1);
        let mut g = Eval::new(&model.params);
        let (a, b) = model.stage_mapping(&mut g, 0, 0, &top, &top).unwrap();
        assert!(a.data().iter().chain(b.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let model = CsnModel::<f64>::build(ModelConfig::tiny(), 11).unwrap();
        let x = input([2, 1, 8, 8], 12);
        let target = input([2, 1, 16, 16], 13);
        let mut tape = Tape::new(&model.params);
        let y = model.forward_graph(&mut tape, x).unwrap();
        let t = tape.constant(target);
        let loss = tape.l1_loss(y, t).unwrap();
        let grads = tape.backward(loss).unwrap();
        for id in model.params.ids() {
            let g = grads.get(id).unwrap_or_else(|| panic!("{}", model.params.param(id).name));
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "dead gradient in {}",
                model.params.param(id).name
            );
        }
    }

    #[test]
    fn eval_and_tape_agree() {
        for variant in Variant::ALL {
            let cfg = ModelConfig {
                variant,
                residual_scale: 0.5,
                ..ModelConfig::tiny()
            };
            let model = CsnModel::<f64>::build(cfg, 4).unwrap();
            let x = input([1, 1, 6, 5], 8);
            let eager = model.forward(&x).unwrap();
            let mut tape = Tape::new(&model.params);
            let v = model.forward_graph(&mut tape, x).unwrap();
            assert_eq!(tape.value(v), &eager, "{variant}");
        }
    }

    #[test]
    fn from_params_validates() {
        let model = CsnModel::<f32>::build(ModelConfig::tiny(), 0).unwrap();
        assert!(CsnModel::from_params(ModelConfig::tiny(), model.params.clone()).is_ok());
        let other = ModelConfig {
            variant: Variant::R3R3,
            ..ModelConfig::tiny()
        };
        assert!(CsnModel::from_params(other, model.params.clone()).is_err());
        let scale3 = ModelConfig {
            scale: 3,
            ..ModelConfig::tiny()
        };
        assert!(CsnModel::from_params(scale3, model.params).is_err());
    }
}
