//! Batch commands: mask bank, dataset generation, training, inference and
//! evaluation. Each takes a [`RunConfig`] and works on the paths it names.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::datagen::{
    derive_seed, generate_dataset, load_inference_input, load_training_set, save_training_set, NetworkInput,
    TrainingManifest, TrainingSample,
};
use crate::dataio::{load_dataset, write_png, DatasetDescriptor, StereoSample};
use crate::error::{ensure, Error, Result};
use crate::image::ImageBuffer;
use crate::losses::{
    disparity_loss_batch, perceptual_loss, reconstruction_losses, style_loss, total_loss, tv_loss, LossComponents,
    LossValues,
};
use crate::maskbank::{build_bank, MaskBank};
use crate::metrics::{evaluate_inpainting, EvalReport, Inpainter};
use crate::network::{assemble_batch, composite, load_checkpoint, mask_batch, save_checkpoint, FeatureExtractor, UNet};
use crate::tensor::{Adam, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

pub fn cmd_maskbank(cfg: &RunConfig) -> Result<MaskBank> {
    let bank = build_bank(&cfg.dataset, &cfg.mask_params())?;
    bank.save(&cfg.paths.mask_bank)?;
    log::info!("mask bank: {} entries in {}", bank.len(), cfg.paths.mask_bank.display());
    Ok(bank)
}

fn load_scenes(desc: &DatasetDescriptor) -> Result<Vec<StereoSample>> {
    let mut scenes = Vec::new();
    for s in load_dataset(desc)? {
        match s {
            Ok(s) => scenes.push(s),
            Err(e) => log::warn!("{e}"),
        }
    }
    Ok(scenes)
}

/// Generate the training or test split. The test split uses `test_dataset`
/// when given and a seed derived from the run seed.
pub fn cmd_datagen(cfg: &RunConfig, split: Split) -> Result<TrainingManifest> {
    let params = cfg.datagen_params();
    let (desc, count, seed, out) = match split {
        Split::Train => (&cfg.dataset, cfg.samples, cfg.seed, &cfg.paths.training_set),
        Split::Test => (
            cfg.test_dataset.as_ref().unwrap_or(&cfg.dataset),
            cfg.test_samples,
            derive_seed(cfg.seed, u64::MAX),
            &cfg.paths.test_set,
        ),
    };
    let scenes = load_scenes(desc)?;
    let bank = if params.square_masks { None } else { Some(MaskBank::load(&cfg.paths.mask_bank)?) };
    let samples = generate_dataset(&scenes, bank.as_ref(), count, seed, &params)?;
    let manifest = save_training_set(out, &samples)?;
    log::info!("datagen: {} samples in {}", samples.len(), out.display());
    Ok(manifest)
}

/// `[N, 3, H, W]` batch of images.
pub fn image_batch(images: &[&ImageBuffer]) -> Result<Tensor> {
    ensure!(!images.is_empty(), "empty batch");
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for im in images {
        ensure!(im.height == h && im.width == w, "image sizes differ within a batch");
        data.extend(im.to_rgb().to_planar());
    }
    Tensor::new(data, &[images.len(), 3, h, w])
}

/// Forward pass plus composite for a batch of inputs.
pub fn inpaint_inputs(net: &UNet, inputs: &[&NetworkInput], stereo: bool) -> Result<Vec<ImageBuffer>> {
    let (x, m) = assemble_batch(inputs, stereo)?;
    let out = net.forward(&x, &m)?.detach();
    let cc = image_batch(&inputs.iter().map(|i| &i.cc_left).collect::<Vec<_>>())?;
    let c = mask_batch(&inputs.iter().map(|i| &i.context_mask).collect::<Vec<_>>())?;
    let s = mask_batch(&inputs.iter().map(|i| &i.synthesis_mask).collect::<Vec<_>>())?;
    let comp = composite(&out, &cc, &c, &s)?;
    (0..inputs.len()).map(|i| ImageBuffer::from_tensor(&comp, i)).collect()
}

pub struct ModelInpainter<'a> {
    pub net: &'a UNet,
    pub stereo: bool,
}

impl Inpainter for ModelInpainter<'_> {
    fn inpaint(&self, samples: &[&TrainingSample]) -> Result<Vec<ImageBuffer>> {
        let inputs: Vec<&NetworkInput> = samples.iter().map(|s| &s.input).collect();
        inpaint_inputs(self.net, &inputs, self.stereo)
    }
}

/// Everything one optimization step needs besides the model.
pub struct TrainContext<'a> {
    pub cfg: &'a RunConfig,
    pub features: FeatureExtractor,
}

impl<'a> TrainContext<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        Ok(Self { cfg, features: FeatureExtractor::new(cfg.train.feature_seed)? })
    }

    /// The six loss terms for a batch. Reconstruction terms see the raw
    /// network output; the others see the composite, with perceptual and
    /// style restricted to `C ∪ S`.
    pub fn losses(&self, net: &UNet, batch: &[&TrainingSample]) -> Result<LossComponents> {
        let opts = &self.cfg.train;
        let inputs: Vec<&NetworkInput> = batch.iter().map(|s| &s.input).collect();
        let (x, m) = assemble_batch(&inputs, opts.use_stereo_context)?;
        let out = net.forward(&x, &m)?;
        let cc = image_batch(&batch.iter().map(|s| &s.input.cc_left).collect::<Vec<_>>())?;
        let gt = image_batch(&batch.iter().map(|s| &s.gt_left).collect::<Vec<_>>())?;
        let c = mask_batch(&batch.iter().map(|s| &s.input.context_mask).collect::<Vec<_>>())?;
        let s_masks: Vec<_> = batch.iter().map(|s| &s.input.synthesis_mask).collect();
        let s = mask_batch(&s_masks)?;
        let comp = composite(&out, &cc, &c, &s)?;

        let (synthesis, context) = reconstruction_losses(&out, &gt, &s, &c)?;
        // feature terms only see the region with ground truth: C ∪ S
        let region = c.add(&s)?;
        let (comp_r, gt_r) = (comp.mask_channels(&region)?, gt.mask_channels(&region)?);
        let disparity = if opts.use_disparity_loss && self.cfg.loss.disparity > 0.0 {
            let rights: Vec<_> = batch.iter().map(|s| &s.right).collect();
            let disps: Vec<_> = batch.iter().map(|s| &s.disparity).collect();
            disparity_loss_batch(&comp, &rights, &s_masks, &disps, &self.cfg.disparity_loss)?.0
        } else {
            Tensor::scalar(0.0)
        };
        Ok(LossComponents {
            synthesis,
            context,
            perceptual: perceptual_loss(&self.features, &comp_r, &gt_r)?,
            style: style_loss(&self.features, &comp_r, &gt_r)?,
            tv: tv_loss(&comp, &s)?,
            disparity,
        })
    }

    /// Forward, backward and one Adam update. Gradients are cleared after.
    pub fn step(&self, net: &UNet, adam: &mut Adam, batch: &[&TrainingSample]) -> Result<LossValues> {
        let comps = self.losses(net, batch)?;
        let total = total_loss(&comps, &self.cfg.loss)?;
        let values = comps.values(total.item());
        ensure_finite(&values)?;
        total.backward()?;
        let params = net.parameters();
        adam.step(&params)?;
        for p in &params {
            p.zero_grad();
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("non-finite parameters after the update"));
        }
        Ok(values)
    }
}

fn ensure_finite(v: &LossValues) -> Result<()> {
    let all = [v.total, v.synthesis, v.context, v.perceptual, v.style, v.tv, v.disparity];
    if all.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite loss: {v:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub values: LossValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: Vec<StepRecord>,
    /// `(epoch, mean total loss)` for every epoch run here.
    pub epoch_means: Vec<(usize, f64)>,
    pub last_checkpoint: Option<PathBuf>,
}

const LOG_HEADER: &str = "epoch step total synthesis context perceptual style tv disparity";

fn log_line(r: &StepRecord) -> String {
    let v = &r.values;
    format!(
        "{} {} {} {} {} {} {} {} {}\n",
        r.epoch, r.step, v.total, v.synthesis, v.context, v.perceptual, v.style, v.tv, v.disparity
    )
}

/// Sample order for an epoch; depends only on the seed and the epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Train on the training split, logging every step and checkpointing after
/// every epoch. A non-finite loss aborts with the previous checkpoint intact.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let samples = load_training_set(&cfg.paths.training_set)?;
    ensure!(!samples.is_empty(), "training set is empty");
    let net = UNet::new(cfg.network.clone())?;
    let (mut adam, start_epoch, mut step) = match &cfg.train.resume_from {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            ck.load_into(&net)?;
            let mut adam = ck.optimizer(&net)?;
            adam.config.lr = cfg.learning_rate;
            log::info!("resuming from {} at epoch {}", path.display(), ck.header.epoch);
            (adam, ck.header.epoch, ck.header.global_step)
        }
        None => (Adam::new(cfg.adam())?.with_f32_storage(true), 0, 0),
    };
    let ctx = TrainContext::new(cfg)?;

    let log_path = &cfg.paths.train_log;
    if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let fresh = cfg.train.resume_from.is_none();
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    if fresh {
        writeln!(log_file, "{LOG_HEADER}").map_err(|e| Error::io(log_path, e))?;
    }

    let mut summary = TrainSummary { steps: Vec::new(), epoch_means: Vec::new(), last_checkpoint: None };
    for epoch in start_epoch + 1..=cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            step += 1;
            let values = ctx.step(&net, &mut adam, &batch).map_err(|e| match e {
                Error::Numeric(m) => Error::numeric(format!("epoch {epoch} step {step}: {m}")),
                other => other,
            })?;
            let rec = StepRecord { epoch, step, values };
            log_file.write_all(log_line(&rec).as_bytes()).map_err(|e| Error::io(log_path, e))?;
            log::debug!("epoch {epoch} step {step} total {}", values.total);
            sum += values.total;
            count += 1;
            summary.steps.push(rec);
        }
        let mean = sum / count as f64;
        log::info!("epoch {epoch}: mean total loss {mean}");
        summary.epoch_means.push((epoch, mean));
        let path = cfg.paths.epoch_checkpoint(epoch);
        save_checkpoint(&path, &net, &adam, epoch, step)?;
        save_checkpoint(&cfg.paths.latest_checkpoint(), &net, &adam, epoch, step)?;
        summary.last_checkpoint = Some(path);
    }
    log_file.flush().map_err(|e| Error::io(log_path, e))?;
    Ok(summary)
}

/// Model described by `cfg.network` with weights from the checkpoint; a
/// shape disagreement names the tensor and dimension.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<UNet> {
    let ck = load_checkpoint(checkpoint)?;
    let net = UNet::new(cfg.network.clone())?;
    ck.load_into(&net)?;
    Ok(net)
}

fn sample_dirs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.join("cc_left.png").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(input, e))?.path();
        if p.join("cc_left.png").is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(format!("{}: no sample directories with cc_left.png", input.display())));
    }
    Ok(dirs)
}

/// Inpaint every sample directory under `paths.infer_input`, writing
/// `<name>.png` into `paths.infer_output`.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let net = load_model(cfg, &cfg.paths.checkpoint_for_inference())?;
    let dirs = sample_dirs(&cfg.paths.infer_input)?;
    let mut written = Vec::new();
    for chunk in dirs.chunks(cfg.batch_size) {
        let inputs = chunk.iter().map(|d| load_inference_input(d, &cfg.datagen.canny)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&NetworkInput> = inputs.iter().collect();
        let outputs = inpaint_inputs(&net, &refs, cfg.train.use_stereo_context)?;
        for (dir, img) in chunk.iter().zip(&outputs) {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sample".into());
            let path = cfg.paths.infer_output.join(format!("{name}.png"));
            write_png(img, &path)?;
            written.push(path);
        }
    }
    log::info!("infer: wrote {} images to {}", written.len(), cfg.paths.infer_output.display());
    Ok(written)
}

/// Score the checkpoint on the test split and write the report files.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let net = load_model(cfg, &cfg.paths.checkpoint_for_inference())?;
    let samples = load_training_set(&cfg.paths.test_set)?;
    let fe = FeatureExtractor::new(cfg.train.feature_seed)?;
    let inpainter = ModelInpainter { net: &net, stereo: cfg.train.use_stereo_context };
    let (report, outputs) =
        evaluate_inpainting(&inpainter, &samples, cfg.eval.scope, cfg.batch_size, &fe, &cfg.eval.dispe)?;
    report.write(&cfg.paths.eval_output, &samples, &outputs)?;
    log::info!("eval ({}): psnr {:.3} dB, ssim {:.4}", report.scope, report.aggregate.psnr, report.aggregate.ssim);
    Ok(report)
}
