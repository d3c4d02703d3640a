//! Two-stage training loop: image-level optimization of the radiance field,
//! then feature-level optimization with the progressive decoder, plus the
//! optimizer, schedules, and checkpoint plumbing.

mod adam;
mod checkpoint;
mod config;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData};
pub use config::{lr_schedule, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{CameraPose, Intrinsics, PoseDistribution};
use crate::error::{Error, Result};
use crate::losses::{
    gan_d_loss, image_reproj_loss_with_mu, mrf_loss, r1_penalty, LossReport,
};
use crate::nets::{DecoderNet, DiscriminatorNet, MappingNet, ParamSet, RadianceFieldNet};
use crate::scene::{DatasetHandle, DatasetSource, SyntheticScene};
use crate::tensor::Tensor;
use crate::warp::{build_stereo_pair, stereo_mixup, StereoPair};

type E = f32;

pub struct Trainer {
    pub config: TrainConfig,
    pub mapping: MappingNet,
    pub field: RadianceFieldNet,
    pub decoder: DecoderNet,
    pub disc: DiscriminatorNet,
    pub g_params: ParamSet<E>,
    pub d_params: ParamSet<E>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub dataset: DatasetHandle,
    pub step: usize,
}

fn scene_from_config(cfg: &TrainConfig) -> Result<SyntheticScene> {
    Ok(match cfg.scene_kind.as_str() {
        "textured_sphere" => SyntheticScene::sphere(cfg.scene_seed),
        "textured_plane" => SyntheticScene::plane(cfg.scene_seed, 0.0),
        "two_tone_blob" => SyntheticScene::blob(cfg.scene_seed),
        other => return Err(Error::InvalidArgument(format!("scene_kind {other}"))),
    })
}

fn pose_dist(cfg: &TrainConfig) -> PoseDistribution {
    match cfg.pose_kind.as_str() {
        "uniform" => PoseDistribution::uniform(cfg.pose_h_spread, cfg.pose_v_spread),
        _ => PoseDistribution::gaussian(cfg.pose_h_spread, cfg.pose_v_spread),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let max_res = config.resolutions.last().copied().unwrap_or(config.train_res);
        let mapping = MappingNet { dim: config.latent_dim };
        let field = RadianceFieldNet::new(config.field_width, config.latent_dim, true);
        let decoder = DecoderNet::new(
            config.train_res,
            config.field_width,
            config.latent_dim,
            max_res,
        );
        let disc = DiscriminatorNet::new(max_res);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut g_params = ParamSet::new();
        mapping.init_params(&mut g_params, &mut rng);
        field.init_params(&mut g_params, &mut rng);
        decoder.init_params(&mut g_params, &mut rng);
        let mut d_params = ParamSet::new();
        disc.init_params(&mut d_params, &mut rng);

        let source = if config.dataset == "synthetic" {
            DatasetSource::Synthetic {
                scene: scene_from_config(&config)?,
                count: config.scene_count,
                poses: pose_dist(&config),
                cam_radius: config.cam_radius,
                fov_deg: config.fov_deg,
            }
        } else {
            DatasetSource::Folder(config.dataset.clone().into())
        };
        let dataset = DatasetHandle::new(source, max_res, config.seed ^ 0xda7a)?;

        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        Ok(Trainer {
            config,
            mapping,
            field,
            decoder,
            disc,
            g_params,
            d_params,
            opt_g: Adam::new(b1, b2),
            opt_d: Adam::new(b1, b2),
            dataset,
            step: 0,
        })
    }

    /// 1 while `step < stage1_steps`, then 2.
    pub fn stage(&self) -> u8 {
        if self.step < self.config.stage1_steps {
            1
        } else {
            2
        }
    }

    /// Output (and discriminator) resolution at the current step.
    pub fn current_resolution(&self) -> usize {
        if self.stage() == 1 || self.config.resolutions.is_empty() {
            return self.config.train_res;
        }
        let s2 = self.step - self.config.stage1_steps;
        let idx = (s2 / self.config.stage2_steps_per_resolution)
            .min(self.config.resolutions.len() - 1);
        self.config.resolutions[idx]
    }

    /// Linear 0 -> 1 ramp over the first `stage2_fade_steps` of each stage II
    /// resolution; 1 during stage I.
    pub fn fade_alpha(&self) -> f64 {
        if self.stage() == 1 || self.config.resolutions.is_empty() {
            return 1.0;
        }
        let s2 = self.step - self.config.stage1_steps;
        let within = s2 % self.config.stage2_steps_per_resolution;
        (within as f64 / self.config.stage2_fade_steps as f64).min(1.0)
    }

    fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.config.train_res, self.config.fov_deg)
    }

    /// Deterministic per-step randomness: resuming from a checkpoint at step
    /// k replays exactly the draws an uninterrupted run would make.
    fn step_rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.config
                .seed
                .wrapping_add((self.step as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15))
                ^ salt,
        )
    }

    fn draw_latents(&self, rng: &mut ChaCha8Rng) -> Tensor<E> {
        let b = self.config.batch_size;
        let data: Vec<E> = (0..b * self.config.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Tensor::constant(data, &[b, self.config.latent_dim])
    }

    fn draw_poses(&self, rng: &mut ChaCha8Rng) -> (Vec<CameraPose>, Vec<CameraPose>) {
        let dist = pose_dist(&self.config);
        let b = self.config.batch_size;
        let pri = (0..b).map(|_| dist.sample(rng, self.config.cam_radius)).collect();
        let aux = (0..b).map(|_| dist.sample(rng, self.config.cam_radius)).collect();
        (pri, aux)
    }

    /// eta in [0,1], shared across the batch unless eta_per_sample; forced to
    /// 1 (mix = primary) when mixup is disabled.
    fn draw_eta(&self, rng: &mut ChaCha8Rng) -> Tensor<E> {
        let b = self.config.batch_size;
        if !self.config.mixup_enabled {
            return Tensor::full(&[b, 1, 1, 1], 1.0);
        }
        if self.config.eta_per_sample {
            let data: Vec<E> = (0..b).map(|_| rng.gen_range(0.0..=1.0)).collect();
            Tensor::constant(data, &[b, 1, 1, 1])
        } else {
            Tensor::full(&[b, 1, 1, 1], rng.gen_range(0.0..=1.0))
        }
    }

    fn render_pair(
        &self,
        params: &ParamSet<E>,
        w: &Tensor<E>,
        poses: (&[CameraPose], &[CameraPose]),
        rng: &mut ChaCha8Rng,
    ) -> Result<StereoPair<E>> {
        build_stereo_pair(
            &self.field,
            params,
            w,
            poses.0,
            poses.1,
            &self.intrinsics(),
            self.config.near,
            self.config.far,
            self.config.samples_per_ray,
            rng,
            true,
        )
    }

    /// Real batch at `res`, rescaled to [-1, 1] for the discriminator.
    fn real_batch(&mut self, res: usize) -> Result<Tensor<E>> {
        let mut img = self.dataset.next_batch::<E>(self.config.batch_size);
        while img.shape()[2] > res {
            img = img.avg_pool(2)?;
        }
        Ok(img.mul_scalar(2.0).add_scalar(-1.0))
    }

    fn to_disc_range(img: &Tensor<E>) -> Tensor<E> {
        img.mul_scalar(2.0).add_scalar(-1.0)
    }

    /// Names updated by the generator optimizer in the current stage: the
    /// decoder joins only in stage II.
    fn g_names(&self) -> Vec<String> {
        let mut names = self.g_params.names_with_prefix("g_m.");
        names.extend(self.g_params.names_with_prefix("g_s."));
        if self.stage() == 2 {
            names.extend(self.g_params.names_with_prefix("g_d."));
        }
        names
    }

    /// Mean MRF loss over batch items with enough valid correspondence.
    fn batch_mrf(&self, pair: &StereoPair<E>) -> Result<Tensor<E>> {
        let b = self.config.batch_size;
        let f = self.field.feature_dim();
        let r = self.config.train_res;
        let mut terms = Vec::new();
        for i in 0..b {
            let fp = pair.pri.feature.slice(0, i, 1)?.reshape(&[f, r, r])?;
            let fw = pair.warped_feature.slice(0, i, 1)?.reshape(&[f, r, r])?;
            let m = pair.valid.slice(0, i, 1)?.reshape(&[1, r, r])?;
            match mrf_loss(&fp, &fw, &m) {
                Ok(l) => terms.push(l),
                Err(Error::InvalidArgument(_)) => continue, // too few valid pixels
                Err(e) => return Err(e),
            }
        }
        if terms.is_empty() {
            return Ok(Tensor::scalar(0.0));
        }
        let n = terms.len();
        let mut acc = terms.remove(0);
        for t in terms {
            acc = acc.add(&t)?;
        }
        Ok(acc.mul_scalar(1.0 / n as f64 as E))
    }

    /// One full alternating D/G iteration. Dispatches on the stage.
    pub fn train_step(&mut self) -> Result<LossReport> {
        if self.step >= self.config.total_steps() {
            return Err(Error::Training("training schedule exhausted".into()));
        }
        let report = if self.stage() == 1 {
            self.step_stage1()
        } else {
            self.step_stage2()
        }?;
        if !report.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at step {}: {report:?}",
                self.step
            )));
        }
        self.step += 1;
        Ok(report)
    }

    fn lr_g(&self) -> f64 {
        lr_schedule(
            self.step,
            self.config.total_steps(),
            self.config.lr_g,
            self.config.lr_g_final,
        )
    }

    fn lr_d(&self) -> f64 {
        lr_schedule(
            self.step,
            self.config.total_steps(),
            self.config.lr_d,
            self.config.lr_d_final,
        )
    }

    /// Run the discriminator phase on a (detached) fake batch and update phi.
    fn d_phase(&mut self, fake_img: &Tensor<E>, fade: f64, report: &mut LossReport) -> Result<()> {
        let res = self.current_resolution();
        let fake = self.disc.forward(&self.d_params, fake_img, fade)?;
        let real = self.real_batch(res)?;
        let r1 = r1_penalty(&self.disc, &self.d_params, &real, fade)?;
        let real_scores = self.disc.forward(&self.d_params, &real, fade)?;
        report.r1 = r1.mean_all().item() as f64;
        let d_loss = gan_d_loss(&real_scores, &fake, &r1, self.config.lambda_r1)?;
        report.d_adv = d_loss.item() as f64 - self.config.lambda_r1 * report.r1;
        report.total += d_loss.item() as f64;
        let grads = d_loss.backward()?;
        let names = self.d_params.names().to_vec();
        let lr = self.lr_d();
        self.opt_d.update(&mut self.d_params, &names, &grads, lr)
    }

    fn g_update(&mut self, g_loss: &Tensor<E>, report: &mut LossReport) -> Result<()> {
        report.total += g_loss.item() as f64;
        let grads = g_loss.backward()?;
        let names = self.g_names();
        let lr = self.lr_g();
        self.opt_g.update(&mut self.g_params, &names, &grads, lr)
    }

    // Both stages render the stereo pair once per iteration and share it
    // between the phases: the discriminator phase sees it detached (no
    // generator gradients are needed there), the generator phase keeps the
    // live graph. eta is redrawn for each phase.

    fn step_stage1(&mut self) -> Result<LossReport> {
        let cfg = self.config.clone();
        let fade = self.fade_alpha();
        let mut report = LossReport::default();
        let needs_aux = cfg.reproj_weight != 0.0 || (cfg.mixup_enabled && cfg.adv_weight != 0.0);

        let mut rng = self.step_rng(0x5);
        let z = self.draw_latents(&mut rng);
        let (pri_poses, aux_poses) = self.draw_poses(&mut rng);
        let eta_d = self.draw_eta(&mut rng);
        let eta_g = self.draw_eta(&mut rng);
        report.eta_used = eta_g.data()[0] as f64;
        let w = self.mapping.forward(&self.g_params, &z)?;

        let mut g_loss = Tensor::scalar(0.0f32);
        if needs_aux {
            let pair = self.render_pair(&self.g_params, &w, (&pri_poses, &aux_poses), &mut rng)?;
            report.valid_fraction =
                pair.valid.data().iter().map(|&v| v as f64).sum::<f64>() / pair.valid.numel() as f64;
            if cfg.adv_weight != 0.0 {
                let i_mix_d = stereo_mixup(
                    &pair.pri.color.detach(),
                    &pair.warped_color.detach(),
                    &pair.valid,
                    &eta_d,
                )?;
                self.d_phase(&Self::to_disc_range(&i_mix_d), fade, &mut report)?;
            }
            if cfg.reproj_weight != 0.0 {
                let (l_ir, _) = image_reproj_loss_with_mu(
                    &pair.pri.color,
                    &pair.warped_color,
                    &pair.valid,
                    cfg.mu_ssim,
                )?;
                report.reproj = l_ir.item() as f64;
                g_loss = g_loss.add(&l_ir.mul_scalar(cfg.reproj_weight as E))?;
            }
            if cfg.adv_weight != 0.0 {
                let i_mix =
                    stereo_mixup(&pair.pri.color, &pair.warped_color, &pair.valid, &eta_g)?;
                let fake = self.disc.forward(
                    &self.d_params.detached(),
                    &Self::to_disc_range(&i_mix),
                    fade,
                )?;
                let adv = fake.neg().softplus().mean_all();
                report.g_adv = adv.item() as f64;
                g_loss = g_loss.add(&adv.mul_scalar(cfg.adv_weight as E))?;
            }
        } else if cfg.adv_weight != 0.0 {
            // mixup off and no reprojection term: the auxiliary view is unused
            let view = crate::render::render_views(
                &self.field,
                &self.g_params,
                &w,
                &pri_poses,
                &self.intrinsics(),
                cfg.near,
                cfg.far,
                cfg.samples_per_ray,
                &mut rng,
                true,
            )?;
            report.valid_fraction = 1.0;
            self.d_phase(&Self::to_disc_range(&view.color.detach()), fade, &mut report)?;
            let fake = self.disc.forward(
                &self.d_params.detached(),
                &Self::to_disc_range(&view.color),
                fade,
            )?;
            let adv = fake.neg().softplus().mean_all();
            report.g_adv = adv.item() as f64;
            g_loss = g_loss.add(&adv.mul_scalar(cfg.adv_weight as E))?;
        }
        self.g_update(&g_loss, &mut report)?;
        Ok(report)
    }

    fn step_stage2(&mut self) -> Result<LossReport> {
        let cfg = self.config.clone();
        let res = self.current_resolution();
        let fade = self.fade_alpha();
        let mut report = LossReport::default();

        let mut rng = self.step_rng(0x5);
        let z = self.draw_latents(&mut rng);
        let (pri_poses, aux_poses) = self.draw_poses(&mut rng);
        let eta_d = self.draw_eta(&mut rng);
        let eta_g = self.draw_eta(&mut rng);
        report.eta_used = eta_g.data()[0] as f64;
        let w = self.mapping.forward(&self.g_params, &z)?;
        let pair = self.render_pair(&self.g_params, &w, (&pri_poses, &aux_poses), &mut rng)?;
        report.valid_fraction =
            pair.valid.data().iter().map(|&v| v as f64).sum::<f64>() / pair.valid.numel() as f64;

        if cfg.adv_weight != 0.0 {
            let f_mix_d = stereo_mixup(
                &pair.pri.feature.detach(),
                &pair.warped_feature.detach(),
                &pair.valid,
                &eta_d,
            )?;
            let img = self
                .decoder
                .forward(&self.g_params.detached(), &f_mix_d, &w.detach(), res, fade)?;
            self.d_phase(&img, fade, &mut report)?;
        }

        let mut g_loss = Tensor::scalar(0.0f32);
        if cfg.reproj_weight != 0.0 {
            let l_fr = self.batch_mrf(&pair)?;
            report.mrf = l_fr.item() as f64;
            g_loss = g_loss.add(&l_fr.mul_scalar(cfg.reproj_weight as E))?;
        }
        if cfg.adv_weight != 0.0 {
            let f_mix =
                stereo_mixup(&pair.pri.feature, &pair.warped_feature, &pair.valid, &eta_g)?;
            let img = self.decoder.forward(&self.g_params, &f_mix, &w, res, fade)?;
            let fake = self
                .disc
                .forward(&self.d_params.detached(), &img, fade)?;
            let adv = fake.neg().softplus().mean_all();
            report.g_adv = adv.item() as f64;
            g_loss = g_loss.add(&adv.mul_scalar(cfg.adv_weight as E))?;
        }
        self.g_update(&g_loss, &mut report)?;
        Ok(report)
    }

    /// Masked L_ir of the current generator averaged over `n_pairs` fresh
    /// pose pairs separated by `yaw_gap` radians (training-quality probe).
    pub fn eval_reproj(&self, n_pairs: usize, yaw_gap: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.g_params.detached();
        let mut total = 0.0;
        for _ in 0..n_pairs {
            let z: Vec<E> = (0..self.config.latent_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let w = self
                .mapping
                .forward(&g, &Tensor::constant(z, &[1, self.config.latent_dim]))?;
            let yaw0 = rng.gen_range(-0.2..0.2);
            let pri = CameraPose::new(0.0, yaw0, self.config.cam_radius);
            let aux = CameraPose::new(0.0, yaw0 + yaw_gap, self.config.cam_radius);
            let pair = build_stereo_pair(
                &self.field,
                &g,
                &w,
                &[pri],
                &[aux],
                &self.intrinsics(),
                self.config.near,
                self.config.far,
                self.config.samples_per_ray,
                &mut rng,
                false,
            )?;
            let (l_ir, _) = image_reproj_loss_with_mu(
                &pair.pri.color,
                &pair.warped_color,
                &pair.valid,
                self.config.mu_ssim,
            )?;
            total += l_ir.item() as f64;
        }
        Ok(total / n_pairs as f64)
    }

    // Deterministic evaluation renders used by the command-line tools. All of
    // them detach the parameters and render without stratified jitter, so the
    // same checkpoint and arguments always produce the same pixels.

    /// Latent row [1, latent_dim] derived from a seed.
    pub fn z_from_seed(&self, seed: u64) -> Tensor<E> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<E> = (0..self.config.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Tensor::constant(data, &[1, self.config.latent_dim])
    }

    pub fn w_from_z(&self, z: &Tensor<E>) -> Result<Tensor<E>> {
        self.mapping.forward(&self.g_params.detached(), z)
    }

    pub fn w_from_seed(&self, seed: u64) -> Result<Tensor<E>> {
        self.w_from_z(&self.z_from_seed(seed))
    }

    fn expand_w(&self, w: &Tensor<E>, b: usize) -> Result<Tensor<E>> {
        if w.shape()[0] == b {
            Ok(w.clone())
        } else {
            w.broadcast_to(&[b, self.config.latent_dim])
        }
    }

    /// Unstratified field render at the training resolution; `w` is either
    /// one row shared by all poses or one row per pose.
    pub fn render_eval(
        &self,
        w: &Tensor<E>,
        poses: &[CameraPose],
    ) -> Result<crate::render::RenderedView<E>> {
        let g = self.g_params.detached();
        let wb = self.expand_w(w, poses.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: no jitter
        crate::render::render_views(
            &self.field,
            &g,
            &wb,
            poses,
            &self.intrinsics(),
            self.config.near,
            self.config.far,
            self.config.samples_per_ray,
            &mut rng,
            false,
        )
    }

    /// Stage-aware image in [0, 1]: the raw field color in stage I, decoded
    /// features in stage II. `w_field` and `w_dec` may differ (style mixing);
    /// pass the same tensor for a plain render.
    pub fn render_image(
        &self,
        w_field: &Tensor<E>,
        w_dec: &Tensor<E>,
        poses: &[CameraPose],
    ) -> Result<Tensor<E>> {
        let view = self.render_eval(w_field, poses)?;
        if self.stage() == 1 {
            return Ok(view.color);
        }
        let g = self.g_params.detached();
        let wb = self.expand_w(w_dec, poses.len())?;
        let img = self.decoder.forward(
            &g,
            &view.feature,
            &wb,
            self.current_resolution(),
            self.fade_alpha(),
        )?;
        Ok(img.add_scalar(1.0).mul_scalar(0.5))
    }

    /// Unstratified stereo pair for warp diagnostics.
    pub fn stereo_eval(
        &self,
        w: &Tensor<E>,
        pri: &[CameraPose],
        aux: &[CameraPose],
    ) -> Result<StereoPair<E>> {
        let g = self.g_params.detached();
        let wb = self.expand_w(w, pri.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        build_stereo_pair(
            &self.field,
            &g,
            &wb,
            pri,
            aux,
            &self.intrinsics(),
            self.config.near,
            self.config.far,
            self.config.samples_per_ray,
            &mut rng,
            false,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let dump = |p: &ParamSet<E>| {
            p.iter()
                .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec()))
                .collect::<Vec<_>>()
        };
        let (epoch, cursor) = self.dataset.state();
        let g_names = self.g_params.names().to_vec();
        let d_names = self.d_params.names().to_vec();
        save_checkpoint(
            &CheckpointData {
                config: self.config.clone(),
                step: self.step as u64,
                stage: self.stage(),
                cur_res: self.current_resolution() as u32,
                fade_alpha: self.fade_alpha(),
                dataset_epoch: epoch,
                dataset_cursor: cursor as u64,
                g_params: dump(&self.g_params),
                d_params: dump(&self.d_params),
                adam_g_step: self.opt_g.step_count() as u64,
                adam_g: self.opt_g.export(&g_names),
                adam_d_step: self.opt_d.step_count() as u64,
                adam_d: self.opt_d.export(&d_names),
            },
            path,
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Trainer> {
        let data = load_checkpoint(path)?;
        let mut t = Trainer::new(data.config)?;
        let restore = |params: &mut ParamSet<E>,
                       saved: Vec<(String, Vec<usize>, Vec<f32>)>|
         -> Result<()> {
            for (name, shape, values) in saved {
                match params.try_get(&name) {
                    Some(p) if p.shape() == shape.as_slice() => {
                        params.set(&name, Tensor::var(values, &shape));
                    }
                    Some(_) => {
                        return Err(Error::Checkpoint(format!(
                            "parameter {name} has an unexpected shape"
                        )))
                    }
                    None => {
                        return Err(Error::Checkpoint(format!("unknown parameter {name}")))
                    }
                }
            }
            Ok(())
        };
        restore(&mut t.g_params, data.g_params)?;
        restore(&mut t.d_params, data.d_params)?;
        t.opt_g.restore(data.adam_g_step as usize, data.adam_g);
        t.opt_d.restore(data.adam_d_step as usize, data.adam_d);
        t.dataset.seek(data.dataset_epoch, data.dataset_cursor as usize);
        t.step = data.step as usize;
        Ok(t)
    }
}
