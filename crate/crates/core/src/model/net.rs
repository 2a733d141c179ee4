//! The velocity network: a diffusion transformer over joint-latent tokens
//! with adaLN-Zero conditioning on time and text.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::adapter::{self, AdapterCache, AdapterSlots};
use super::config::{ModelConfig, Prediction, CLEAN_T_MIN};
use super::joint::{tokenize, untokenize, JointLayout};
use super::layers::*;
use super::params::{Layout, Slot};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BlockSlots {
    pub mod_w: Slot,
    pub mod_b: Slot,
    pub qkv_w: Slot,
    pub qkv_b: Slot,
    pub out_w: Slot,
    pub out_b: Slot,
    pub mlp1_w: Slot,
    pub mlp1_b: Slot,
    pub mlp2_w: Slot,
    pub mlp2_b: Slot,
}

#[derive(Debug, Clone)]
pub struct Slots {
    pub in_w: Slot,
    pub in_b: Slot,
    pub pos_frame: Slot,
    pub pos_spatial: Slot,
    pub pos_stream: Slot,
    pub time1_w: Slot,
    pub time1_b: Slot,
    pub time2_w: Slot,
    pub time2_b: Slot,
    pub text: Slot,
    pub blocks: Vec<BlockSlots>,
    pub final_mod_w: Slot,
    pub final_mod_b: Slot,
    pub final_w: Slot,
    pub final_b: Slot,
    pub adapter: Option<AdapterSlots>,
    pub null_action: Slot,
}

impl Slots {
    pub fn build(cfg: &ModelConfig) -> (Layout, Slots) {
        let mut l = Layout::default();
        let d = cfg.arch.embed_dim;
        let g = cfg.geometry;
        let hidden = d * cfg.arch.mlp_ratio;
        let in_w = l.add("embed.w", &[cfg.token_dim(), d]);
        let in_b = l.add("embed.b", &[d]);
        let pos_frame = l.add("pos.frame", &[g.frames, d]);
        let pos_spatial = l.add("pos.spatial", &[cfg.spatial_tokens(), d]);
        let pos_stream = l.add("pos.stream", &[3, d]);
        let time1_w = l.add("time.fc1.w", &[d, d]);
        let time1_b = l.add("time.fc1.b", &[d]);
        let time2_w = l.add("time.fc2.w", &[d, d]);
        let time2_b = l.add("time.fc2.b", &[d]);
        let text = l.add("text.table", &[g.vocab + 1, d]);
        let blocks = (0..cfg.arch.depth)
            .map(|i| BlockSlots {
                mod_w: l.add(format!("block{i}.mod.w"), &[d, 6 * d]),
                mod_b: l.add(format!("block{i}.mod.b"), &[6 * d]),
                qkv_w: l.add(format!("block{i}.qkv.w"), &[d, 3 * d]),
                qkv_b: l.add(format!("block{i}.qkv.b"), &[3 * d]),
                out_w: l.add(format!("block{i}.proj.w"), &[d, d]),
                out_b: l.add(format!("block{i}.proj.b"), &[d]),
                mlp1_w: l.add(format!("block{i}.mlp1.w"), &[d, hidden]),
                mlp1_b: l.add(format!("block{i}.mlp1.b"), &[hidden]),
                mlp2_w: l.add(format!("block{i}.mlp2.w"), &[hidden, d]),
                mlp2_b: l.add(format!("block{i}.mlp2.b"), &[d]),
            })
            .collect();
        let final_mod_w = l.add("final.mod.w", &[d, 2 * d]);
        let final_mod_b = l.add("final.mod.b", &[2 * d]);
        let final_w = l.add("final.out.w", &[d, cfg.token_dim()]);
        let final_b = l.add("final.out.b", &[cfg.token_dim()]);
        let adapter = cfg
            .variant()
            .uses_camera()
            .then(|| AdapterSlots::build(&mut l, g.channels));
        let null_action = l.add("null_action", &[g.channels, g.height, g.width]);
        let slots = Slots {
            in_w,
            in_b,
            pos_frame,
            pos_spatial,
            pos_stream,
            time1_w,
            time1_b,
            time2_w,
            time2_b,
            text,
            blocks,
            final_mod_w,
            final_mod_b,
            final_w,
            final_b,
            adapter,
            null_action,
        };
        (l, slots)
    }
}

/// Conditions for one forward pass. `None` text and ray maps select the
/// null embeddings; `action = false` replaces the action slot with the
/// learned null-action latent.
#[derive(Debug, Clone, Copy)]
pub struct Conditions<'a, T> {
    pub text: Option<usize>,
    pub raymaps: Option<&'a Array4<T>>,
    pub action: bool,
}

struct BlockCache<T> {
    h_in: Array2<T>,
    modv: Array1<T>,
    xn1: Array2<T>,
    rstd1: Array1<T>,
    a1: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    attn: Array2<T>,
    proj: Array2<T>,
    xn2: Array2<T>,
    rstd2: Array1<T>,
    a2: Array2<T>,
    m1: Array2<T>,
    gel: Array2<T>,
    m2: Array2<T>,
}

/// Activations kept for the backward pass.
pub struct Cache<T> {
    tokens: Array2<T>,
    temb: Array2<T>,
    t1: Array2<T>,
    c: Array2<T>,
    sc: Array2<T>,
    text_row: usize,
    blocks: Vec<BlockCache<T>>,
    h_last: Array2<T>,
    fmod: Array1<T>,
    xnf: Array2<T>,
    rstdf: Array1<T>,
    af: Array2<T>,
    adapter: Option<AdapterCache<T>>,
    action: bool,
    /// `1 / max(t, CLEAN_T_MIN)` under clean prediction.
    clean_scale: Option<T>,
}

/// Network definition plus its flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub slots: Slots,
    pub joint: JointLayout,
    pub params: Vec<T>,
}

fn chunk<T: Real>(v: &Array1<T>, i: usize, d: usize) -> ArrayView1<'_, T> {
    v.slice(s![i * d..(i + 1) * d])
}

impl<T: Real> Model<T> {
    /// Allocates a zero-parameter model.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = Slots::build(&config);
        let joint = JointLayout::new(&config);
        Ok(Model {
            params: vec![T::zero(); layout.len],
            config,
            layout,
            slots,
            joint,
        })
    }

    /// Standard initialization: zero gates and output head, sinusoidal
    /// positions, Xavier-uniform linear layers.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let d = m.config.arch.embed_dim;
        let s = m.slots.clone();
        let p = &mut m.params;
        let xavier = |p: &mut [T], sl: Slot, rng: &mut R| {
            let lim = (6.0 / (sl.rows + sl.cols) as f64).sqrt();
            for v in &mut p[sl.range()] {
                *v = T::c(rng.random_range(-lim..lim));
            }
        };
        let normal = |p: &mut [T], sl: Slot, std: f64, rng: &mut R| {
            let n = Normal::new(0.0, std).expect("valid std");
            for v in &mut p[sl.range()] {
                *v = T::c(n.sample(rng));
            }
        };
        xavier(p, s.in_w, rng);
        for f in 0..s.pos_frame.rows {
            s.pos_frame
                .mat_mut(p)
                .row_mut(f)
                .assign(&sinusoidal::<T>(f as f64, d));
        }
        let tp = m.config.arch.token_patch;
        let wb = m.config.geometry.width / tp;
        for i in 0..s.pos_spatial.rows {
            let mut row = s.pos_spatial.mat_mut(p).row_mut(i).to_owned();
            row.slice_mut(s![..d / 2])
                .assign(&sinusoidal::<T>((i / wb) as f64, d / 2));
            row.slice_mut(s![d / 2..])
                .assign(&sinusoidal::<T>((i % wb) as f64, d - d / 2));
            s.pos_spatial.mat_mut(p).row_mut(i).assign(&row);
        }
        normal(p, s.pos_stream, 0.02, rng);
        normal(p, s.time1_w, 0.02, rng);
        normal(p, s.time2_w, 0.02, rng);
        normal(p, s.text, 0.02, rng);
        for b in &s.blocks {
            xavier(p, b.qkv_w, rng);
            xavier(p, b.out_w, rng);
            xavier(p, b.mlp1_w, rng);
            xavier(p, b.mlp2_w, rng);
        }
        if let Some(a) = s.adapter {
            xavier(p, a.conv_in_w, rng);
            xavier(p, a.res1_w, rng);
        }
        Ok(m)
    }

    /// Every parameter drawn from N(0, std); used by gradient checks so
    /// that no branch is silenced by a zero gate.
    pub fn init_dense<R: Rng>(config: ModelConfig, std: f64, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let n = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut m.params {
            *v = T::c(n.sample(rng));
        }
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn null_action(&self) -> Array3<T> {
        let g = self.config.geometry;
        Array3::from_shape_vec(
            (g.channels, g.height, g.width),
            self.params[self.slots.null_action.range()].to_vec(),
        )
        .expect("null action shape")
    }

    fn check_raymaps(&self, r: &Array4<T>) -> Result<()> {
        let g = self.config.geometry;
        let want = [g.frames, 6, g.height, g.width];
        if r.shape() != want {
            return Err(Error::shape(
                "ray maps",
                format!("{want:?}"),
                format!("{:?}", r.shape()),
            ));
        }
        Ok(())
    }

    /// Predicted velocity for a (noisy) joint latent at time `t`.
    pub fn forward(
        &self,
        joint: &Array4<T>,
        t: f64,
        cond: &Conditions<T>,
    ) -> Result<(Array4<T>, Cache<T>)> {
        let shape = self.joint.shape();
        if joint.dim() != shape {
            return Err(Error::shape(
                "joint latent",
                format!("{:?}", [shape.0, shape.1, shape.2, shape.3]),
                format!("{:?}", joint.shape()),
            ));
        }
        let p = &self.params;
        let s = &self.slots;
        let cfg = &self.config;
        let d = cfg.arch.embed_dim;
        if let Some(id) = cond.text {
            if id >= cfg.geometry.vocab {
                return Err(Error::InvalidArgument(format!(
                    "text id {id} outside vocabulary {}",
                    cfg.geometry.vocab
                )));
            }
        }

        let mut x = joint.clone();
        if !cond.action {
            let null = self.null_action();
            let mut a = self.joint.action().view_mut(&mut x);
            for f in 0..cfg.geometry.frames {
                a.slice_mut(s![.., f, .., ..]).assign(&null);
            }
        }
        let mut adapter_cache = None;
        if let (Some(r), Some(asl)) = (cond.raymaps, s.adapter.as_ref()) {
            self.check_raymaps(r)?;
            let (z, c) = adapter::forward(p, asl, r)?;
            let mut v = self.joint.video().view_mut(&mut x);
            v += &z;
            adapter_cache = Some(c);
        }

        let tp = cfg.arch.token_patch;
        let tokens = tokenize(&x.view(), tp);
        let mut h = linear(&tokens.view(), &s.in_w.mat(p), &s.in_b.vec(p));
        let st = cfg.spatial_tokens();
        let tags = self.joint.frame_tags();
        for (n, mut row) in h.rows_mut().into_iter().enumerate() {
            let (stream, fi) = tags[n / st];
            row += &s.pos_frame.mat(p).row(fi);
            row += &s.pos_spatial.mat(p).row(n % st);
            row += &s.pos_stream.mat(p).row(stream as usize);
        }

        let temb = sinusoidal::<T>(1000.0 * t, d).insert_axis(Axis(0));
        let t1 = linear(&temb.view(), &s.time1_w.mat(p), &s.time1_b.vec(p));
        let t1a = t1.mapv(silu);
        let mut c = linear(&t1a.view(), &s.time2_w.mat(p), &s.time2_b.vec(p));
        let text_row = cond.text.unwrap_or(cfg.geometry.vocab);
        c.row_mut(0)
            .scaled_add(T::one(), &s.text.mat(p).row(text_row));
        let sc = c.mapv(silu);

        let mut blocks = Vec::with_capacity(s.blocks.len());
        for b in &s.blocks {
            let modv = linear(&sc.view(), &b.mod_w.mat(p), &b.mod_b.vec(p))
                .row(0)
                .to_owned();
            let (xn1, rstd1) = layer_norm(&h.view());
            let a1 = modulate(&xn1.view(), &chunk(&modv, 0, d), &chunk(&modv, 1, d));
            let qkv = linear(&a1.view(), &b.qkv_w.mat(p), &b.qkv_b.vec(p));
            let (attn, probs) = attention(&qkv.view(), cfg.arch.heads);
            let proj = linear(&attn.view(), &b.out_w.mat(p), &b.out_b.vec(p));
            let h_mid = &h + &(&proj * &chunk(&modv, 2, d));
            let (xn2, rstd2) = layer_norm(&h_mid.view());
            let a2 = modulate(&xn2.view(), &chunk(&modv, 3, d), &chunk(&modv, 4, d));
            let m1 = linear(&a2.view(), &b.mlp1_w.mat(p), &b.mlp1_b.vec(p));
            let gel = m1.mapv(gelu);
            let m2 = linear(&gel.view(), &b.mlp2_w.mat(p), &b.mlp2_b.vec(p));
            let h_out = &h_mid + &(&m2 * &chunk(&modv, 5, d));
            blocks.push(BlockCache {
                h_in: std::mem::replace(&mut h, h_out),
                modv,
                xn1,
                rstd1,
                a1,
                qkv,
                probs,
                attn,
                proj,
                xn2,
                rstd2,
                a2,
                m1,
                gel,
                m2,
            });
        }

        let fmod = linear(&sc.view(), &s.final_mod_w.mat(p), &s.final_mod_b.vec(p))
            .row(0)
            .to_owned();
        let (xnf, rstdf) = layer_norm(&h.view());
        let af = modulate(&xnf.view(), &chunk(&fmod, 0, d), &chunk(&fmod, 1, d));
        let out_tokens = linear(&af.view(), &s.final_w.mat(p), &s.final_b.vec(p));
        let mut out = untokenize(&out_tokens, shape, tp);
        let clean_scale =
            (cfg.arch.prediction == Prediction::Clean).then(|| T::c(1.0 / t.max(CLEAN_T_MIN)));
        if let Some(k) = clean_scale {
            out = (joint - &out).mapv(|v| v * k);
        }
        Ok((
            out,
            Cache {
                tokens,
                temb,
                t1,
                c,
                sc,
                text_row,
                blocks,
                h_last: h,
                fmod,
                xnf,
                rstdf,
                af,
                adapter: adapter_cache,
                action: cond.action,
                clean_scale,
            },
        ))
    }

    pub fn predict(&self, joint: &Array4<T>, t: f64, cond: &Conditions<T>) -> Result<Array4<T>> {
        Ok(self.forward(joint, t, cond)?.0)
    }

    /// Accumulates `d loss / d params` into `g` given `d loss / d output`
    /// and returns `d loss / d input`.
    pub fn backward(&self, cache: &Cache<T>, dout: &Array4<T>, g: &mut [T]) -> Array4<T> {
        let p = &self.params;
        let s = &self.slots;
        let cfg = &self.config;
        let d = cfg.arch.embed_dim;
        let tp = cfg.arch.token_patch;
        let mut dsc = Array2::<T>::zeros((1, d));

        let dnet = match cache.clean_scale {
            Some(k) => dout.mapv(|v| -v * k),
            None => dout.clone(),
        };
        let dtok = tokenize(&dnet.view(), tp);
        let daf = linear_backward(
            &cache.af.view(),
            &s.final_w.mat(p),
            &dtok.view(),
            Slot::pair_mut(s.final_w, s.final_b, g),
        );
        let mut dfmod = Array1::<T>::zeros(2 * d);
        let dxnf = {
            let (mut dsh, mut dscl) = (Array1::zeros(d), Array1::zeros(d));
            let r = modulate_backward(
                &cache.xnf.view(),
                &chunk(&cache.fmod, 1, d),
                &daf.view(),
                &mut dsh.view_mut(),
                &mut dscl.view_mut(),
            );
            dfmod.slice_mut(s![..d]).assign(&dsh);
            dfmod.slice_mut(s![d..]).assign(&dscl);
            r
        };
        let mut dh = layer_norm_backward(&cache.xnf.view(), &cache.rstdf.view(), &dxnf.view());
        let dfm = dfmod.insert_axis(Axis(0));
        dsc += &linear_backward(
            &cache.sc.view(),
            &s.final_mod_w.mat(p),
            &dfm.view(),
            Slot::pair_mut(s.final_mod_w, s.final_mod_b, g),
        );
        let _ = &cache.h_last;

        for (b, bc) in s.blocks.iter().zip(&cache.blocks).rev() {
            let mut dmod = Array1::<T>::zeros(6 * d);
            // MLP branch
            dmod.slice_mut(s![5 * d..])
                .assign(&(&dh * &bc.m2).sum_axis(Axis(0)));
            let dm2 = &dh * &chunk(&bc.modv, 5, d);
            let mut dgel = linear_backward(
                &bc.gel.view(),
                &b.mlp2_w.mat(p),
                &dm2.view(),
                Slot::pair_mut(b.mlp2_w, b.mlp2_b, g),
            );
            ndarray::Zip::from(&mut dgel)
                .and(&bc.m1)
                .for_each(|dv, &x| *dv *= gelu_grad(x));
            let da2 = linear_backward(
                &bc.a2.view(),
                &b.mlp1_w.mat(p),
                &dgel.view(),
                Slot::pair_mut(b.mlp1_w, b.mlp1_b, g),
            );
            let dxn2 = {
                let (mut dsh, mut dscl) = (Array1::zeros(d), Array1::zeros(d));
                let r = modulate_backward(
                    &bc.xn2.view(),
                    &chunk(&bc.modv, 4, d),
                    &da2.view(),
                    &mut dsh.view_mut(),
                    &mut dscl.view_mut(),
                );
                dmod.slice_mut(s![3 * d..4 * d]).assign(&dsh);
                dmod.slice_mut(s![4 * d..5 * d]).assign(&dscl);
                r
            };
            let dh_mid = &dh + &layer_norm_backward(&bc.xn2.view(), &bc.rstd2.view(), &dxn2.view());
            // attention branch
            dmod.slice_mut(s![2 * d..3 * d])
                .assign(&(&dh_mid * &bc.proj).sum_axis(Axis(0)));
            let dproj = &dh_mid * &chunk(&bc.modv, 2, d);
            let dattn = linear_backward(
                &bc.attn.view(),
                &b.out_w.mat(p),
                &dproj.view(),
                Slot::pair_mut(b.out_w, b.out_b, g),
            );
            let dqkv = attention_backward(&bc.qkv.view(), &bc.probs, &dattn.view());
            let da1 = linear_backward(
                &bc.a1.view(),
                &b.qkv_w.mat(p),
                &dqkv.view(),
                Slot::pair_mut(b.qkv_w, b.qkv_b, g),
            );
            let dxn1 = {
                let (mut dsh, mut dscl) = (Array1::zeros(d), Array1::zeros(d));
                let r = modulate_backward(
                    &bc.xn1.view(),
                    &chunk(&bc.modv, 1, d),
                    &da1.view(),
                    &mut dsh.view_mut(),
                    &mut dscl.view_mut(),
                );
                dmod.slice_mut(s![..d]).assign(&dsh);
                dmod.slice_mut(s![d..2 * d]).assign(&dscl);
                r
            };
            dh = dh_mid + layer_norm_backward(&bc.xn1.view(), &bc.rstd1.view(), &dxn1.view());
            let _ = &bc.h_in;
            let dm = dmod.insert_axis(Axis(0));
            dsc += &linear_backward(
                &cache.sc.view(),
                &b.mod_w.mat(p),
                &dm.view(),
                Slot::pair_mut(b.mod_w, b.mod_b, g),
            );
        }

        // conditioning vector
        let mut dc = dsc;
        ndarray::Zip::from(&mut dc)
            .and(&cache.c)
            .for_each(|dv, &x| *dv *= silu_grad(x));
        s.text
            .mat_mut(g)
            .row_mut(cache.text_row)
            .scaled_add(T::one(), &dc.row(0));
        let t1a = cache.t1.mapv(silu);
        let mut dt1 = linear_backward(
            &t1a.view(),
            &s.time2_w.mat(p),
            &dc.view(),
            Slot::pair_mut(s.time2_w, s.time2_b, g),
        );
        ndarray::Zip::from(&mut dt1)
            .and(&cache.t1)
            .for_each(|dv, &x| *dv *= silu_grad(x));
        linear_backward_params(
            &cache.temb.view(),
            &dt1.view(),
            Slot::pair_mut(s.time1_w, s.time1_b, g),
        );

        // embedding and positions
        let st = cfg.spatial_tokens();
        let tags = self.joint.frame_tags();
        for (n, row) in dh.rows().into_iter().enumerate() {
            let (stream, fi) = tags[n / st];
            s.pos_frame
                .mat_mut(g)
                .row_mut(fi)
                .scaled_add(T::one(), &row);
            s.pos_spatial
                .mat_mut(g)
                .row_mut(n % st)
                .scaled_add(T::one(), &row);
            s.pos_stream
                .mat_mut(g)
                .row_mut(stream as usize)
                .scaled_add(T::one(), &row);
        }
        let dtokens = linear_backward(
            &cache.tokens.view(),
            &s.in_w.mat(p),
            &dh.view(),
            Slot::pair_mut(s.in_w, s.in_b, g),
        );
        let mut dx = untokenize(&dtokens, self.joint.shape(), tp);
        if let (Some(ac), Some(asl)) = (cache.adapter.as_ref(), s.adapter.as_ref()) {
            let dz = self.joint.video().view(&dx).to_owned();
            adapter::backward(p, asl, ac, &dz, g);
        }
        if !cache.action {
            let mut da = self.joint.action().view_mut(&mut dx);
            let mut gn = s.null_action.mat_mut(g);
            for (dst, src) in gn.iter_mut().zip(da.sum_axis(Axis(1)).iter()) {
                *dst += *src;
            }
            da.fill(T::zero());
        }
        if let Some(k) = cache.clean_scale {
            dx.scaled_add(k, dout);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{ArchConfig, Geometry, Variant};
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn micro(variant: Variant) -> ModelConfig {
        ModelConfig {
            arch: ArchConfig {
                embed_dim: 8,
                heads: 2,
                depth: 1,
                variant,
                ..ArchConfig::default()
            },
            geometry: Geometry {
                channels: 4,
                frames: 2,
                height: 2,
                width: 2,
                vocab: 3,
            },
        }
    }

    fn rand4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den.max(1e-12)
    }

    #[test]
    fn shapes_and_param_count() {
        for v in Variant::ALL {
            let m = Model::<f64>::init(micro(v), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert!(m.num_params() < 10_000);
            let x = Array4::zeros(m.joint.shape());
            let r = Array4::zeros((2, 6, 2, 2));
            let cond = Conditions {
                text: Some(1),
                raymaps: Some(&r),
                action: true,
            };
            assert_eq!(m.predict(&x, 0.5, &cond).unwrap().dim(), m.joint.shape());
            assert_eq!(m.layout.get("adapter.conv_in.w").is_some(), v.uses_camera());
        }
    }

    #[test]
    fn zero_initialized_head_predicts_zero() {
        let m =
            Model::<f64>::init(micro(Variant::Full), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = rand4(m.joint.shape(), &mut ChaCha8Rng::seed_from_u64(2));
        let cond = Conditions {
            text: None,
            raymaps: None,
            action: false,
        };
        assert!(m.predict(&x, 0.3, &cond).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m =
            Model::<f64>::init(micro(Variant::Full), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cond = Conditions {
            text: None,
            raymaps: None,
            action: true,
        };
        assert!(matches!(
            m.predict(&Array4::zeros((4, 4, 2, 2)), 0.5, &cond),
            Err(Error::Shape { .. })
        ));
        let x = Array4::zeros(m.joint.shape());
        let bad = Conditions {
            text: Some(3),
            ..cond
        };
        assert!(m.predict(&x, 0.5, &bad).is_err());
        let r = Array4::zeros((2, 5, 2, 2));
        let bad = Conditions {
            raymaps: Some(&r),
            ..cond
        };
        assert!(matches!(m.predict(&x, 0.5, &bad), Err(Error::Shape { .. })));
        let mut cfg = micro(Variant::Full);
        cfg.arch.max_tokens = 8;
        assert!(Model::<f64>::zeros(cfg).is_err());
    }

    #[test]
    fn full_jacobian_matches_finite_differences() {
        for (prediction, action) in [(Prediction::Velocity, true), (Prediction::Clean, false)] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut cfg = micro(Variant::Full);
            cfg.arch.prediction = prediction;
            let m = Model::<f64>::init_dense(cfg, 0.3, &mut rng).unwrap();
            let x = rand4(m.joint.shape(), &mut rng);
            let r = rand4((2, 6, 2, 2), &mut rng);
            let cond = Conditions {
                text: Some(0),
                raymaps: Some(&r),
                action,
            };
            let (y, cache) = m.forward(&x, 0.4, &cond).unwrap();
            let n = y.len();
            let h = 1e-3;
            let mut analytic = Vec::with_capacity(n * n);
            let mut numeric = Vec::with_capacity(n * n);
            for o in 0..n {
                let mut dout = Array4::zeros(y.dim());
                dout.as_slice_mut().unwrap()[o] = 1.0;
                let mut g = vec![0.0; m.num_params()];
                analytic.extend(m.backward(&cache, &dout, &mut g).iter().copied());
            }
            let mut cols = vec![vec![0.0; n]; n];
            for (i, col) in cols.iter_mut().enumerate() {
                let mut xp = x.clone();
                xp.as_slice_mut().unwrap()[i] += h;
                let mut xm = x.clone();
                xm.as_slice_mut().unwrap()[i] -= h;
                let yp = m.predict(&xp, 0.4, &cond).unwrap();
                let ym = m.predict(&xm, 0.4, &cond).unwrap();
                for o in 0..n {
                    col[o] = (yp.as_slice().unwrap()[o] - ym.as_slice().unwrap()[o]) / (2.0 * h);
                }
            }
            for o in 0..n {
                for col in &cols {
                    numeric.push(col[o]);
                }
            }
            let e = rel_err(&analytic, &numeric);
            assert!(e <= 1e-3, "{prediction:?}: jacobian relative error {e}");
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for (v, action, text, prediction) in [
            (Variant::Full, true, Some(2), Prediction::Velocity),
            (Variant::Full, false, None, Prediction::Velocity),
            (Variant::ChannelConcat, true, Some(1), Prediction::Velocity),
            (
                Variant::NoCameraAdapter,
                false,
                Some(0),
                Prediction::Velocity,
            ),
            (Variant::Full, true, Some(1), Prediction::Clean),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut cfg = micro(v);
            cfg.arch.prediction = prediction;
            let mut m = Model::<f64>::init_dense(cfg, 0.3, &mut rng).unwrap();
            let x = rand4(m.joint.shape(), &mut rng);
            let w = rand4(m.joint.shape(), &mut rng);
            let r = rand4((2, 6, 2, 2), &mut rng);
            let cond = Conditions {
                text,
                raymaps: Some(&r),
                action,
            };
            let (_, cache) = m.forward(&x, 0.7, &cond).unwrap();
            let mut g = vec![0.0; m.num_params()];
            m.backward(&cache, &w, &mut g);
            let loss = |m: &Model<f64>| (&m.predict(&x, 0.7, &cond).unwrap() * &w).sum();
            let h = 1e-3;
            let mut num = vec![0.0; g.len()];
            for i in 0..g.len() {
                let orig = m.params[i];
                m.params[i] = orig + h;
                let lp = loss(&m);
                m.params[i] = orig - h;
                let lm = loss(&m);
                m.params[i] = orig;
                num[i] = (lp - lm) / (2.0 * h);
            }
            let e = rel_err(&g, &num);
            assert!(e <= 1e-3, "{v:?} action={action}: relative error {e}");
            for t in &m.layout.tensors {
                let sl = m.layout.slot(&t.name).unwrap();
                let et = rel_err(&g[sl.range()], &num[sl.range()]);
                let scale = num[sl.range()].iter().fold(0.0f64, |a, b| a.max(b.abs()));
                assert!(
                    et <= 1e-3 || scale < 1e-9,
                    "{v:?} {}: relative error {et}",
                    t.name
                );
            }
        }
    }

    #[test]
    fn spatial_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Model::<f64>::init_dense(micro(Variant::NoCameraAdapter), 0.3, &mut rng).unwrap();
        let x = rand4(m.joint.shape(), &mut rng);
        let cond = Conditions {
            text: Some(1),
            raymaps: None,
            action: true,
        };
        let y = m.predict(&x, 0.5, &cond).unwrap();
        // swap (0,0) <-> (1,1) in the input and in the spatial table
        let perm = [3usize, 1, 2, 0];
        let mut m2 = m.clone();
        let sp = m.slots.pos_spatial;
        for (i, &j) in perm.iter().enumerate() {
            let row = sp.mat(&m.params).row(j).to_owned();
            sp.mat_mut(&mut m2.params).row_mut(i).assign(&row);
        }
        let pix = |k: usize| (k / 2, k % 2);
        let permute = |a: &Array4<f64>| {
            let mut b = a.clone();
            for (i, &j) in perm.iter().enumerate() {
                let ((yi, xi), (yj, xj)) = (pix(i), pix(j));
                b.slice_mut(s![.., .., yi, xi])
                    .assign(&a.slice(s![.., .., yj, xj]));
            }
            b
        };
        let y2 = m2.predict(&permute(&x), 0.5, &cond).unwrap();
        let diff = (&y2 - &permute(&y))
            .mapv(f64::abs)
            .fold(0.0f64, |a, b| a.max(*b));
        assert!(diff < 1e-12, "max diff {diff}");
    }
}
