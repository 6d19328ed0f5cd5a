//! The full view-synthesis model: GLSA encoder, explicit and implicit
//! renderers, decoder, plus the self-supervised depth network and the
//! auxiliary networks used only by the losses.

use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    chw_to_tokens, tokens_to_chw, Conv, Isab, Linear, Lsa, Mab, MixFfn, Mlp2, PatchEmbed,
    ResnetBlock, ENCODING_CHANNELS,
};
use crate::camera::{pose_to_params, reproject, CameraModel, CoordinateMaps, RelativePose};
use crate::error::{ModelError, TensorError};
use crate::ops;
use crate::params::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::warp::{derive_out_of_view_mask, splat_by_reprojection, OutOfViewMask};

#[derive(Debug, Clone, PartialEq)]
pub struct ViewNetConfig {
    /// encoder depth (number of GLSA blocks)
    pub n: usize,
    /// transformer blocks per renderer
    pub m_blocks: usize,
    /// channel width
    pub c: usize,
    /// local attention window (odd)
    pub r: usize,
    /// inducing points
    pub m_inducing: usize,
    /// square input extent, divisible by 16
    pub image_size: usize,
}

impl Default for ViewNetConfig {
    fn default() -> Self {
        ViewNetConfig { n: 8, m_blocks: 6, c: 256, r: 5, m_inducing: 32, image_size: 64 }
    }
}

impl ViewNetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.m_blocks == 0 || self.c == 0 || self.r == 0 || self.m_inducing == 0 {
            return Err("all model dimensions must be positive".into());
        }
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(format!("image size {} not divisible by 16", self.image_size));
        }
        if self.r % 2 == 0 {
            return Err(format!("window size {} must be odd", self.r));
        }
        Ok(())
    }
}

/// One encoder stage: global set attention over augmented tokens, local
/// set attention over the window, summed into a Mix-FFN.
struct GlsaBlock {
    global_enc: Mlp2,
    isab: Isab,
    global_proj: Linear,
    lsa: Lsa,
    ffn: MixFfn,
}

impl GlsaBlock {
    fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        r: usize,
        m: usize,
        grid: usize,
    ) -> GlsaBlock {
        let e = ENCODING_CHANNELS;
        GlsaBlock {
            global_enc: Mlp2::init(store, rng, &format!("{name}.genc"), 3, e, e, false),
            isab: Isab::init(store, rng, &format!("{name}.isab"), c + e, m),
            global_proj: Linear::init(store, rng, &format!("{name}.gproj"), c + e, c, false),
            lsa: Lsa::init(store, rng, &format!("{name}.lsa"), c, r),
            ffn: MixFfn::init(store, rng, &format!("{name}.ffn"), c, grid, grid),
        }
    }

    fn forward<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        f: &Tensor<T>,
        x_w: &Tensor<T>,
        diff: &Tensor<T>,
    ) -> Tensor<T> {
        let [_, h, w] = *f.shape() else { panic!("GLSA input must be [C,H,W]") };
        let tokens = chw_to_tokens(f);
        let genc = self.global_enc.forward(ctx, &chw_to_tokens(x_w));
        let aug = ops::concat(&[&tokens, &genc], 1);
        let g_global =
            tokens_to_chw(&self.global_proj.forward(ctx, &self.isab.forward(ctx, &aug)), h, w);
        let g_local = self.lsa.forward(ctx, f, diff);
        let x = ops::add(&ops::add(f, &g_global), &g_local);
        self.ffn.forward(ctx, &x)
    }
}

/// Shared renderer trunk: x4 patch embedding, transformer blocks with
/// spatial feed-forwards, two upsampling residual blocks back to the
/// input extent.
struct RendererTrunk {
    embed: PatchEmbed,
    blocks: Vec<Mab>,
    up1: ResnetBlock,
    up2: ResnetBlock,
    grid: usize,
}

impl RendererTrunk {
    fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        m_blocks: usize,
        grid_in: usize,
    ) -> RendererTrunk {
        let grid = grid_in / 4;
        RendererTrunk {
            embed: PatchEmbed::init(store, rng, &format!("{name}.embed"), c, c),
            blocks: (0..m_blocks)
                .map(|i| {
                    Mab::init_with_rff(
                        store,
                        rng,
                        &format!("{name}.blk{i}"),
                        c,
                        Some((grid, grid)),
                    )
                })
                .collect(),
            up1: ResnetBlock::init(store, rng, &format!("{name}.up1"), c, c, true),
            up2: ResnetBlock::init(store, rng, &format!("{name}.up2"), c, c, true),
            grid,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
        let mut t = chw_to_tokens(&self.embed.forward(ctx, x));
        if let Some(b) = bias {
            t = ops::add(&t, b); // [n,C] + [1,C]
        }
        for blk in &self.blocks {
            t = blk.forward(ctx, &t, &t);
        }
        let f = tokens_to_chw(&t, self.grid, self.grid);
        self.up2.forward(ctx, &self.up1.forward(ctx, &f))
    }
}

struct Decoder {
    rb1: ResnetBlock,
    rb2: ResnetBlock,
    rb3: ResnetBlock,
    rb4: ResnetBlock,
    to_rgb: Conv,
}

impl Decoder {
    fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
    ) -> Decoder {
        let c2 = (c / 2).max(4);
        let c4 = (c / 4).max(4);
        Decoder {
            rb1: ResnetBlock::init(store, rng, &format!("{name}.rb1"), 2 * c, c, false),
            rb2: ResnetBlock::init(store, rng, &format!("{name}.rb2"), c, c2, true),
            rb3: ResnetBlock::init(store, rng, &format!("{name}.rb3"), c2, c4, true),
            rb4: ResnetBlock::init(store, rng, &format!("{name}.rb4"), c4, c4, false),
            to_rgb: Conv::init(store, rng, &format!("{name}.rgb"), c4, 3, 3, 1, 1, true),
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<T>, h_e: &Tensor<T>, h_i: &Tensor<T>) -> Tensor<T> {
        let x = ops::concat(&[h_e, h_i], 0);
        let x = self.rb1.forward(ctx, &x);
        let x = self.rb2.forward(ctx, &x);
        let x = self.rb3.forward(ctx, &x);
        let x = self.rb4.forward(ctx, &x);
        ops::tanh(&self.to_rgb.forward(ctx, &x))
    }
}

/// Explicit-renderer output bundle: the rendered feature map, the raw
/// warped features before the trunk, and the coverage mask.
pub struct ExplicitRender<T: Scalar> {
    pub h_e: Tensor<T>,
    pub warped: Tensor<T>,
    pub mask: OutOfViewMask,
}

pub struct ViewNet {
    pub cfg: ViewNetConfig,
    patch: PatchEmbed,
    glsa: Vec<GlsaBlock>,
    explicit: RendererTrunk,
    implicit: RendererTrunk,
    delta_pos: Mlp2,
    decoder: Decoder,
}

impl ViewNet {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ViewNetConfig,
    ) -> ViewNet {
        cfg.validate().expect("invalid model configuration");
        let grid = cfg.image_size / 4;
        ViewNet {
            cfg: cfg.clone(),
            patch: PatchEmbed::init(store, rng, "vn.patch", 3, cfg.c),
            glsa: (0..cfg.n)
                .map(|i| {
                    GlsaBlock::init(
                        store,
                        rng,
                        &format!("vn.glsa{i}"),
                        cfg.c,
                        cfg.r,
                        cfg.m_inducing,
                        grid,
                    )
                })
                .collect(),
            explicit: RendererTrunk::init(store, rng, "vn.er", cfg.c, cfg.m_blocks, grid),
            implicit: RendererTrunk::init(store, rng, "vn.ir", cfg.c, cfg.m_blocks, grid),
            delta_pos: Mlp2::init(store, rng, "vn.dpos", 7, cfg.c, cfg.c, false),
            decoder: Decoder::init(store, rng, "vn.dec", cfg.c),
        }
    }

    /// Encoder: f_0 from the patch embedding, then N GLSA stages over
    /// the quarter-resolution coordinate maps.
    pub fn encode<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        i_ref: &Tensor<T>,
        maps: &CoordinateMaps,
    ) -> Result<Tensor<T>, ModelError> {
        let grid = self.cfg.image_size / 4;
        if maps.width != grid || maps.height != grid {
            return Err(TensorError::ShapeMismatch {
                expected: vec![3, grid, grid],
                got: vec![3, maps.height, maps.width],
            }
            .into());
        }
        let f = self.patch.forward(ctx, i_ref);
        let x_w = Tensor::from_vec(
            maps.x_w.iter().map(|&v| T::from_f64(v)).collect(),
            vec![3, grid, grid],
        );
        let diff = Tensor::from_vec(
            maps.x_w.iter().zip(&maps.x_img).map(|(&w, &i)| T::from_f64(w - i)).collect(),
            vec![3, grid, grid],
        );
        let mut f = f;
        for blk in &self.glsa {
            f = blk.forward(ctx, &f, &x_w, &diff);
        }
        Ok(f)
    }

    /// Forward-warp f_N along the reprojection, then render.
    pub fn render_explicit<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        f_n: &Tensor<T>,
        camera_q: &CameraModel,
        maps: &CoordinateMaps,
        pose: &RelativePose,
    ) -> Result<ExplicitRender<T>, ModelError> {
        let rep = reproject(camera_q, maps, pose);
        let splat = splat_by_reprojection(f_n, &rep)?;
        let mask = derive_out_of_view_mask(&splat.weight, maps.width, maps.height);
        let h_e = self.explicit.forward(ctx, &splat.warped, None);
        Ok(ExplicitRender { h_e, warped: splat.warped, mask })
    }

    /// Condition on the 7-parameter pose added to every trunk token.
    pub fn render_implicit<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        f_n: &Tensor<T>,
        pose: &RelativePose,
    ) -> Result<Tensor<T>, ModelError> {
        let params = pose_to_params(pose)?;
        let v: Vec<T> = params.as_array().iter().map(|&x| T::from_f64(x)).collect();
        let bias = self.delta_pos.forward(ctx, &Tensor::from_vec(v, vec![1, 7]));
        Ok(self.implicit.forward(ctx, f_n, Some(&bias)))
    }

    /// One-shot decode of the concatenated renderer outputs to RGB in
    /// [-1, 1].
    pub fn decode<T: Scalar>(&self, ctx: &Ctx<T>, h_e: &Tensor<T>, h_i: &Tensor<T>) -> Tensor<T> {
        assert_eq!(h_e.shape(), h_i.shape(), "renderer outputs must agree in shape");
        self.decoder.forward(ctx, h_e, h_i)
    }

    /// Full pipeline from a reference image and its full-resolution
    /// depth to the synthesized target view.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        i_ref: &Tensor<T>,
        depth_full: &[f64],
        camera: &CameraModel,
        pose: &RelativePose,
    ) -> Result<ForwardOutput<T>, ModelError> {
        let camera_q = camera.scaled_by(0.25)?;
        let depth_q = downsample_depth(depth_full, camera.width, camera.height, 4);
        let maps = crate::camera::unproject(&camera_q, &depth_q)?;
        let f_n = self.encode(ctx, i_ref, &maps)?;
        let er = self.render_explicit(ctx, &f_n, &camera_q, &maps, pose)?;
        let h_i = self.render_implicit(ctx, &f_n, pose)?;
        let i_tgt = self.decode(ctx, &er.h_e, &h_i);
        Ok(ForwardOutput { i_tgt, h_e: er.h_e, h_i, warped: er.warped, mask: er.mask })
    }
}

pub struct ForwardOutput<T: Scalar> {
    pub i_tgt: Tensor<T>,
    pub h_e: Tensor<T>,
    pub h_i: Tensor<T>,
    pub warped: Tensor<T>,
    pub mask: OutOfViewMask,
}

/// Average-pool a depth map by an integer factor.
pub fn downsample_depth(depth: &[f64], width: usize, height: usize, factor: usize) -> Vec<f64> {
    assert_eq!(depth.len(), width * height);
    assert!(width % factor == 0 && height % factor == 0);
    let (w, h) = (width / factor, height / factor);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    s += depth[(y * factor + dy) * width + x * factor + dx];
                }
            }
            out[y * w + x] = s / (factor * factor) as f64;
        }
    }
    out
}

/// Per-pixel ratio of channel norms ||h_e(p)|| / ||h_i(p)||.
pub fn norm_ratio_map<T: Scalar>(h_e: &Tensor<T>, h_i: &Tensor<T>) -> Vec<f64> {
    assert_eq!(h_e.shape(), h_i.shape());
    let [c, h, w] = *h_e.shape() else { panic!("norm ratio expects [C,H,W]") };
    let n = h * w;
    let (de, di) = (h_e.data(), h_i.data());
    (0..n)
        .map(|p| {
            let ne: f64 = (0..c).map(|k| de[k * n + p].to_f64().powi(2)).sum::<f64>().sqrt();
            let ni: f64 = (0..c).map(|k| di[k * n + p].to_f64().powi(2)).sum::<f64>().sqrt();
            ne / (ni + 1e-8)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// depth network

#[derive(Debug, Clone, PartialEq)]
pub struct DepthNetConfig {
    /// channel width of the first level; doubles per level
    pub base: usize,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        DepthNetConfig { base: 16, d_min: 0.5, d_max: 12.0 }
    }
}

/// Four-level convolutional encoder-decoder with skip connections,
/// sigmoid disparity head mapped into [d_min, d_max].
pub struct DepthNet {
    pub cfg: DepthNetConfig,
    enc: Vec<Conv>,
    dec: Vec<Conv>,
    head: Conv,
}

impl DepthNet {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &DepthNetConfig,
    ) -> DepthNet {
        assert!(cfg.d_min > 0.0 && cfg.d_max > cfg.d_min);
        let b = cfg.base;
        let widths = [3, b, 2 * b, 4 * b, 8 * b];
        let enc = (0..4)
            .map(|i| {
                Conv::init(store, rng, &format!("dn.enc{i}"), widths[i], widths[i + 1], 3, 2, 1, false)
            })
            .collect();
        // decoder level i consumes upsampled deeper features plus the
        // matching encoder skip
        let dec = (0..4)
            .map(|i| {
                let deep = widths[4 - i];
                let skip = if i < 3 { widths[3 - i] } else { 0 };
                Conv::init(store, rng, &format!("dn.dec{i}"), deep + skip, widths[3 - i].max(b), 3, 1, 1, false)
            })
            .collect();
        let head = Conv::init(store, rng, "dn.head", b, 1, 3, 1, 1, false);
        DepthNet { cfg: cfg.clone(), enc, dec, head }
    }

    /// image [3,H,W] -> depth [H,W], strictly inside [d_min, d_max].
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, image: &Tensor<T>) -> Tensor<T> {
        let mut skips = Vec::new();
        let mut x = image.clone();
        for conv in &self.enc {
            x = ops::relu(&conv.forward(ctx, &x));
            skips.push(x.clone());
        }
        for (i, conv) in self.dec.iter().enumerate() {
            let up = ops::bilinear_upsample_x2(&x);
            let cat = if i < 3 {
                ops::concat(&[&up, &skips[2 - i]], 0)
            } else {
                up
            };
            x = ops::relu(&conv.forward(ctx, &cat));
        }
        let sigma = ops::sigmoid(&self.head.forward(ctx, &x));
        let lo = 1.0 / self.cfg.d_max;
        let hi = 1.0 / self.cfg.d_min;
        // disparity = sigma * (hi - lo) + lo; depth = 1 / disparity
        let disp = ops::add_scalar(&ops::scale(&sigma, T::from_f64(hi - lo)), T::from_f64(lo));
        let depth = ops::div(&Tensor::scalar(T::one()), &disp);
        let [_, h, w] = *depth.shape() else { unreachable!() };
        ops::reshape(&depth, &[h, w])
    }
}

// ---------------------------------------------------------------------------
// adversarial and perceptual auxiliaries

/// Four strided conv layers and a linear scoring head over a patch.
pub struct PatchDiscriminator {
    convs: Vec<Conv>,
    head: Conv,
}

impl PatchDiscriminator {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        base: usize,
    ) -> PatchDiscriminator {
        let widths = [3, base, 2 * base, 4 * base, 4 * base];
        PatchDiscriminator {
            convs: (0..4)
                .map(|i| {
                    Conv::init(
                        store,
                        rng,
                        &format!("{name}.c{i}"),
                        widths[i],
                        widths[i + 1],
                        3,
                        2,
                        1,
                        false,
                    )
                })
                .collect(),
            head: Conv::init(store, rng, &format!("{name}.head"), 4 * base, 1, 1, 1, 0, false),
        }
    }

    /// Per-patch scores of an image in [-1, 1] range, [1, h', w'].
    pub fn score_map<T: Scalar>(&self, ctx: &Ctx<T>, image: &Tensor<T>) -> Tensor<T> {
        let mut x = image.clone();
        for conv in &self.convs {
            x = ops::relu(&conv.forward(ctx, &x));
        }
        self.head.forward(ctx, &x)
    }

    /// Mean patch score.
    pub fn score<T: Scalar>(&self, ctx: &Ctx<T>, image: &Tensor<T>) -> Tensor<T> {
        ops::mean_all(&self.score_map(ctx, image))
    }
}

/// Frozen random conv pyramid used as the perceptual feature extractor.
/// Weights are seeded constants, never trained.
pub struct Perceptual<T: Scalar> {
    store: ParamStore<T>,
    convs: Vec<Conv>,
}

impl<T: Scalar> Perceptual<T> {
    pub fn new(seed: u64) -> Perceptual<T> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = [3, 8, 16, 32];
        let convs = (0..3)
            .map(|i| {
                Conv::init(&mut store, &mut rng, &format!("percep.c{i}"), widths[i], widths[i + 1], 3, 2, 1, false)
            })
            .collect();
        Perceptual { store, convs }
    }

    /// Multi-scale features of an image; differentiable wrt the image,
    /// constant wrt the extractor.
    pub fn features(&self, tape: &Tape<T>, image: &Tensor<T>) -> Vec<Tensor<T>> {
        let ctx = Ctx::frozen(tape.clone(), &self.store);
        let mut x = image.clone();
        let mut out = Vec::with_capacity(3);
        for conv in &self.convs {
            x = ops::relu(&conv.forward(&ctx, &x));
            out.push(x.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{rot_y, unproject};
    use rand::SeedableRng;

    fn small_cfg() -> ViewNetConfig {
        ViewNetConfig { n: 1, m_blocks: 1, c: 8, r: 3, m_inducing: 2, image_size: 16 }
    }

    fn setup(cfg: &ViewNetConfig) -> (ViewNet, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = ViewNet::init(&mut store, &mut rng, cfg);
        (net, store)
    }

    fn test_image(size: usize) -> Tensor<f64> {
        Tensor::from_vec(
            (0..3 * size * size).map(|v| ((v as f64) * 0.13).sin() * 0.5).collect(),
            vec![3, size, size],
        )
    }

    #[test]
    fn encode_shape_and_depth_sensitivity() {
        let cfg = small_cfg();
        let (net, store) = setup(&cfg);
        let ctx = Ctx::new(Tape::new(), &store);
        let cam = CameraModel::default_for(cfg.image_size).scaled_by(0.25).unwrap();
        let img = test_image(cfg.image_size);
        let maps = unproject(&cam, &vec![3.0; 16]).unwrap();
        let f = net.encode(&ctx, &img, &maps).unwrap();
        assert_eq!(f.shape(), &[8, 4, 4]);

        let maps2 = unproject(&cam, &vec![6.0; 16]).unwrap();
        let f2 = net.encode(&ctx, &img, &maps2).unwrap();
        let diff: f64 =
            f.data().iter().zip(f2.data().iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff > 1e-3, "encoder ignores depth: diff {diff}");
    }

    #[test]
    fn explicit_identity_pose_warp_is_exact() {
        let cfg = small_cfg();
        let (net, store) = setup(&cfg);
        let ctx = Ctx::new(Tape::new(), &store);
        let cam = CameraModel::default_for(cfg.image_size).scaled_by(0.25).unwrap();
        let maps = unproject(&cam, &vec![2.5; 16]).unwrap();
        let f_n = Tensor::from_vec((0..8 * 16).map(|v| (v as f64 * 0.3).cos()).collect(), vec![8, 4, 4]);
        let er = net
            .render_explicit(&ctx, &f_n, &cam, &maps, &RelativePose::identity())
            .unwrap();
        for (a, b) in er.warped.data().iter().zip(f_n.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(er.h_e.shape(), f_n.shape());
        assert_eq!(er.mask.ratio(), 0.0);
    }

    #[test]
    fn implicit_pose_sensitivity() {
        let cfg = small_cfg();
        let (net, store) = setup(&cfg);
        let ctx = Ctx::new(Tape::new(), &store);
        let f_n = Tensor::from_vec((0..8 * 16).map(|v| (v as f64 * 0.3).cos()).collect(), vec![8, 4, 4]);
        let h1 = net.render_implicit(&ctx, &f_n, &RelativePose::identity()).unwrap();
        let pose = RelativePose::new(rot_y(20.0), [0.5, 0.0, 0.0]).unwrap();
        let h2 = net.render_implicit(&ctx, &f_n, &pose).unwrap();
        assert_eq!(h1.shape(), f_n.shape());
        let diff: f64 =
            h1.data().iter().zip(h2.data().iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff > 1e-3);
    }

    #[test]
    fn decode_shape_and_asymmetry() {
        let cfg = small_cfg();
        let (net, mut store) = setup(&cfg);
        // non-zero RGB head so asymmetry is visible at init
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = crate::params::trunc_normal::<f64>(&mut rng, 3 * 4 * 9, 0.05);
        store.set_data("vn.dec.rgb.w", w);
        let ctx = Ctx::new(Tape::new(), &store);
        let h_e = Tensor::from_vec((0..8 * 16).map(|v| (v as f64 * 0.17).sin()).collect(), vec![8, 4, 4]);
        let h_i = Tensor::from_vec((0..8 * 16).map(|v| (v as f64 * 0.29).cos()).collect(), vec![8, 4, 4]);
        let out = net.decode(&ctx, &h_e, &h_i);
        assert_eq!(out.shape(), &[3, 16, 16]);
        assert!(out.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        let swapped = net.decode(&ctx, &h_i, &h_e);
        let diff: f64 = out
            .data()
            .iter()
            .zip(swapped.data().iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "decoder symmetric under input swap");
    }

    #[test]
    fn decode_zero_inputs_constant_image() {
        let cfg = small_cfg();
        let (net, store) = setup(&cfg);
        let ctx = Ctx::new(Tape::new(), &store);
        let z = Tensor::zeros(&[8, 4, 4]);
        let out = net.decode(&ctx, &z, &z);
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v: &f64| (v - first).abs() < 1e-12));
    }

    #[test]
    fn full_forward_gradients_reach_encoder() {
        let cfg = small_cfg();
        let (net, mut store) = setup(&cfg);
        // the RGB head starts at zero, which blocks upstream flow of a
        // squared loss; give it weights so connectivity is observable
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = crate::params::trunc_normal::<f64>(&mut rng, 3 * 4 * 9, 0.05);
        store.set_data("vn.dec.rgb.w", w);
        let tape = Tape::new();
        let ctx = Ctx::new(tape.clone(), &store);
        let cam = CameraModel::default_for(cfg.image_size);
        let img = test_image(cfg.image_size);
        let pose = RelativePose::new(rot_y(8.0), [0.2, 0.0, 0.0]).unwrap();
        let out = net.forward(&ctx, &img, &vec![3.0; 16 * 16], &cam, &pose).unwrap();
        assert_eq!(out.i_tgt.shape(), &[3, 16, 16]);
        let loss = ops::mean_all(&ops::mul(&out.i_tgt, &out.i_tgt));
        tape.backward(&loss).unwrap();
        let grads = ctx.grads();
        let g = grads.get("vn.patch.conv1.w").unwrap();
        let nonzero = g.as_ref().map(|v| v.iter().any(|x| *x != 0.0)).unwrap_or(false);
        assert!(nonzero, "no gradient reached the patch embedding");
    }

    #[test]
    fn depthnet_range_and_shape() {
        let cfg = DepthNetConfig { base: 4, ..DepthNetConfig::default() };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dn = DepthNet::init(&mut store, &mut rng, &cfg);
        let ctx = Ctx::new(Tape::new(), &store);
        let img = test_image(16);
        let d = dn.forward(&ctx, &img);
        assert_eq!(d.shape(), &[16, 16]);
        for &v in d.data().iter() {
            assert!(v > cfg.d_min && v < cfg.d_max, "depth {v} outside range");
        }
    }

    #[test]
    fn norm_ratio_homogeneity() {
        let h_i = Tensor::from_vec((1..=32).map(|v| v as f64 * 0.1).collect(), vec![2, 4, 4]);
        let h_e = ops::scale(&h_i, 2.0);
        for r in norm_ratio_map(&h_e, &h_i) {
            assert!((r - 2.0).abs() < 1e-6);
        }
        for r in norm_ratio_map(&h_i, &h_i) {
            assert!((r - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn perceptual_is_frozen_and_differentiable() {
        let p = Perceptual::<f64>::new(9);
        let tape = Tape::new();
        let base = test_image(16);
        let img = tape.leaf(base.data().to_vec(), base.shape().to_vec());
        let feats = p.features(&tape, &img);
        assert_eq!(feats.len(), 3);
        assert_eq!(feats[2].shape(), &[32, 2, 2]);
        let loss = ops::mean_all(&feats[2]);
        tape.backward(&loss).unwrap();
        let g = tape.grad(&img).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
