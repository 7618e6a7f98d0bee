use std::fs;
use std::path::{Path, PathBuf};

use jnt_core::data::{
    add_gaussian_noise, gen_blobs, load_dataset, load_pgm, read_manifest, save_pgm, write_dataset,
    BlobStyle, LoadedSample, MANIFEST_NAME,
};
use jnt_core::eval::{evaluate_dataset, EvalSample};
use jnt_core::nn::{build_unet, load_checkpoint, save_checkpoint, Head, Network, UnetSpec};
use jnt_core::pipeline::{
    mask_study, pretrain_segmentation, train_n2v, train_supervised_joint, train_unsupervised_joint,
    SegLoss, TrainConfig, TrainLog, TrainMode,
};
use jnt_core::rng::derive_seed;
use jnt_core::Tensor;

use crate::config::{Overrides, RunConfig, GEN_DATA_KEYS, MASK_STUDY_KEYS, TRAIN_KEYS};
use crate::error::CliError;
use crate::{ConfigArgs, DenoiseArgs, EvalArgs, GenDataArgs, MaskStudyArgs, TrainArgs};

pub const CONFIG_ECHO: &str = "effective_config.txt";

type Result<T> = std::result::Result<T, CliError>;

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{what} {}: {e}", path.display()))
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let non_empty = fs::read_dir(dir)
            .map_err(|e| io_err("listing", dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err("creating", dir, e))
}

/// Refuses to replace an existing file unless `force`, and creates its parent.
fn prepare_out_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).map_err(|e| io_err("creating", p, e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err("writing", path, e))
}

fn overrides<'a>(schema: &'a [crate::config::Key], args: &ConfigArgs) -> Result<Overrides<'a>> {
    let mut o = Overrides::new(schema);
    if let Some(path) = &args.config {
        o.read_file(path)?;
    }
    o.seed_from_env()?;
    o.apply_sets(&args.set)?;
    Ok(o)
}

fn echo_config(dir: &Path, config: &RunConfig, command: &str) -> Result<()> {
    write_text(&dir.join(CONFIG_ECHO), &config.render(command))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut o = overrides(GEN_DATA_KEYS, &args.config)?;
    o.apply_flag("count", args.count)?;
    o.apply_flag("size", args.size)?;
    o.apply_flag("style", args.style)?;
    o.apply_flag("sigma", args.sigma)?;
    o.apply_flag("seed", args.seed)?;
    let config = o.finish(&[
        ("count", "128".into()),
        ("size", "64".into()),
        ("style", "soma".into()),
        ("sigma", "0.2".into()),
        ("seed", "0".into()),
    ])?;
    let style = BlobStyle::parse(config.str("style")).expect("checked choice");
    let sigmas = config.f64_list("sigma");
    let seed = config.u64("seed");
    prepare_out_dir(&args.out, args.force)?;

    let clean = gen_blobs(
        config.usize("count"),
        config.usize("size"),
        (1, 4),
        style,
        seed,
    )?;
    // sigma values are assigned round-robin over the samples
    let samples = clean
        .iter()
        .enumerate()
        .map(|(i, s)| {
            add_gaussian_noise(
                s,
                sigmas[i % sigmas.len()],
                derive_seed(seed, &[0xA0, i as u64]),
            )
        })
        .collect::<jnt_core::Result<Vec<_>>>()?;
    write_dataset(&args.out, &samples)?;
    echo_config(&args.out, &config, "gen-data")?;
    eprintln!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn train_config(config: &RunConfig, mode: TrainMode) -> Result<TrainConfig> {
    let c = TrainConfig {
        mode,
        lr: config.f64("lr"),
        steps: config.usize("steps"),
        mask_count: config.usize("mask_count"),
        w1: config.f64("w1"),
        w2: config.f64("w2"),
        seed: config.u64("seed"),
        weak_fraction: config.f64("weak_fraction"),
        log_every: config.usize("log_every"),
    };
    c.validate()?;
    Ok(c)
}

fn labelled(samples: &[LoadedSample], mode: &str) -> Result<Vec<(Tensor, Tensor)>> {
    samples
        .iter()
        .map(|s| match &s.label {
            Some(l) => Ok((s.noisy.clone(), l.clone())),
            None => Err(CliError::Data(format!(
                "{mode} training needs labels, but sample {} ({}) has no label file{}",
                s.entry.index,
                s.entry.noisy,
                s.entry
                    .label
                    .as_ref()
                    .map(|l| format!(" (missing {l})"))
                    .unwrap_or_default()
            ))),
        })
        .collect()
}

fn expect_head(net: &Network, head: Head, role: &str, path: &Path) -> Result<()> {
    if net.spec.head != head || net.spec.in_channels != 1 || net.spec.out_channels != 1 {
        return Err(CliError::Data(format!(
            "{} is not a {role} checkpoint (head {}, {}→{} channels)",
            path.display(),
            net.spec.head.as_str(),
            net.spec.in_channels,
            net.spec.out_channels
        )));
    }
    Ok(())
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    write_text(path, &log.to_csv())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut o = overrides(TRAIN_KEYS, &args.config)?;
    o.apply_flag("mode", args.mode)?;
    let mode_name = o
        .get("mode")
        .ok_or_else(|| {
            CliError::Usage("no training mode: pass --mode or set mode= in the config".into())
        })?
        .to_string();
    let mode = TrainMode::parse(&mode_name).expect("checked choice");
    let d = TrainConfig::defaults(mode);
    let config = o.finish(&[
        ("lr", d.lr.to_string()),
        ("steps", d.steps.to_string()),
        ("mask_count", d.mask_count.to_string()),
        ("w1", d.w1.to_string()),
        ("w2", d.w2.to_string()),
        ("seed", d.seed.to_string()),
        ("weak_fraction", d.weak_fraction.to_string()),
        ("log_every", d.log_every.to_string()),
        ("scales", "2".into()),
        ("base_width", "8".into()),
        ("seg_loss", "mse".into()),
    ])?;
    let cfg = train_config(&config, mode)?;
    let spec = |head| UnetSpec {
        in_channels: 1,
        out_channels: 1,
        scales: config.usize("scales"),
        base_width: config.usize("base_width"),
        head,
    };
    let fresh = |head, stream: u64| -> Result<Network> {
        let mut net = build_unet(spec(head))?;
        net.init_params(derive_seed(cfg.seed, &[stream]));
        Ok(net)
    };

    let seg_ckpt = match (&args.seg, mode) {
        (Some(path), _) => {
            let net = load_checkpoint(path)?;
            expect_head(&net, Head::Sigmoid, "segmentation", path)?;
            Some(net)
        }
        (None, TrainMode::UnsupervisedJoint) => {
            return Err(CliError::Usage(
                "unsupervised training needs a pretrained frozen segmentation network: pass --seg CKPT \
                 (see `jnt train --mode pretrain-seg`)"
                    .into(),
            ))
        }
        (None, _) => None,
    };
    let samples = load_dataset(&args.data)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "{} lists no samples",
            args.data.display()
        )));
    }
    prepare_out_dir(&args.out, args.force)?;
    let out = &args.out;

    match mode {
        TrainMode::N2v => {
            let images: Vec<Tensor> = samples.iter().map(|s| s.noisy.clone()).collect();
            let mut dn = fresh(Head::Residual, 1)?;
            let log = train_n2v(&mut dn, &images, &cfg)?;
            save_checkpoint(&dn, out.join("denoiser.ckpt"))?;
            write_log(&out.join("train_log.csv"), &log)?;
        }
        TrainMode::SupervisedJoint => {
            let pairs = labelled(&samples, "supervised")?;
            let mut seg = match seg_ckpt {
                Some(mut net) => {
                    net.frozen = false;
                    net
                }
                None => {
                    // weak pretraining: weak_fraction * steps BCE updates
                    let mut net = fresh(Head::Sigmoid, 2)?;
                    let pre = TrainConfig {
                        mode: TrainMode::PretrainSeg,
                        ..cfg.clone()
                    };
                    let log = pretrain_segmentation(&mut net, &pairs, &pre, SegLoss::Bce)?;
                    write_log(&out.join("pretrain_log.csv"), &log)?;
                    net
                }
            };
            let mut dn = fresh(Head::Residual, 1)?;
            let log = train_supervised_joint(&mut dn, &mut seg, &pairs, &cfg)?;
            save_checkpoint(&dn, out.join("denoiser.ckpt"))?;
            save_checkpoint(&seg, out.join("segmenter.ckpt"))?;
            write_log(&out.join("train_log.csv"), &log)?;
        }
        TrainMode::UnsupervisedJoint => {
            let seg = seg_ckpt.expect("checked above");
            if !seg.frozen {
                return Err(CliError::Usage(format!(
                    "{} is not frozen; unsupervised training needs a branch pretrained with seg_loss=mse",
                    args.seg.as_ref().unwrap().display()
                )));
            }
            let images: Vec<Tensor> = samples.iter().map(|s| s.noisy.clone()).collect();
            let mut dn = fresh(Head::Residual, 1)?;
            let log = train_unsupervised_joint(&mut dn, &seg, &images, &cfg)?;
            save_checkpoint(&dn, out.join("denoiser.ckpt"))?;
            write_log(&out.join("train_log.csv"), &log)?;
        }
        TrainMode::PretrainSeg => {
            let pairs = labelled(&samples, "segmentation")?;
            let loss = match config.str("seg_loss") {
                "bce" => SegLoss::Bce,
                _ => SegLoss::Mse,
            };
            let mut seg = match seg_ckpt {
                Some(mut net) => {
                    net.frozen = false;
                    net
                }
                None => fresh(Head::Sigmoid, 2)?,
            };
            let log = pretrain_segmentation(&mut seg, &pairs, &cfg, loss)?;
            save_checkpoint(&seg, out.join("segmenter.ckpt"))?;
            write_log(&out.join("train_log.csv"), &log)?;
        }
    }
    echo_config(out, &config, "train")?;
    eprintln!(
        "{} training finished, outputs in {}",
        mode.as_str(),
        out.display()
    );
    Ok(())
}

/// Inputs to denoise: the noisy images of a dataset directory when it has a
/// manifest, otherwise every `.pgm` file in it.
fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST_NAME).is_file() {
        return Ok(read_manifest(dir)?
            .into_iter()
            .map(|e| dir.join(e.noisy))
            .collect());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err("listing", dir, e))? {
        let path = entry.map_err(|e| io_err("listing", dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("pgm"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn denoise(args: DenoiseArgs) -> Result<()> {
    let model = load_checkpoint(&args.model)?;
    expect_head(&model, Head::Residual, "denoiser", &args.model)?;
    let inputs = pgm_files(&args.input)?;
    prepare_out_dir(&args.out, args.force)?;
    for path in &inputs {
        let image = load_pgm(path)?;
        let out = model.predict(&image).map_err(|e| match CliError::from(e) {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })?;
        save_pgm(&out, args.out.join(path.file_name().expect("file path")))?;
    }
    eprintln!(
        "denoised {} images into {}",
        inputs.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let load = |path: &Option<PathBuf>, head, role| -> Result<Option<Network>> {
        match path {
            Some(p) => {
                let net = load_checkpoint(p)?;
                expect_head(&net, head, role, p)?;
                Ok(Some(net))
            }
            None => Ok(None),
        }
    };
    let denoiser = load(&args.denoiser, Head::Residual, "denoiser")?;
    let seg = load(&args.seg, Head::Sigmoid, "segmentation")?;
    let samples: Vec<EvalSample> = load_dataset(&args.data)?
        .into_iter()
        .map(|s| EvalSample {
            noisy: s.noisy,
            clean: s.clean,
            label: s.label,
        })
        .collect();
    if samples.is_empty() {
        return Err(CliError::Data(format!(
            "{} lists no samples",
            args.data.display()
        )));
    }
    prepare_out_file(&args.out, args.force)?;
    let (_, mean) = evaluate_dataset(denoiser.as_ref(), seg.as_ref(), &samples, Some(&args.out))?;
    let show = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    eprintln!(
        "mean psnr {} ssim {} iou {} f1 {}",
        show(mean.psnr),
        show(mean.ssim),
        show(mean.iou),
        show(mean.f1)
    );
    Ok(())
}

pub fn mask_study_cmd(args: MaskStudyArgs) -> Result<()> {
    let mut o = overrides(MASK_STUDY_KEYS, &args.config)?;
    o.apply_flag("mask_counts", args.mask_counts)?;
    o.apply_flag("replicates", args.replicates)?;
    o.apply_flag("steps", args.steps)?;
    o.apply_flag("workers", args.workers)?;
    let d = TrainConfig::defaults(TrainMode::N2v);
    let config = o.finish(&[
        ("mask_counts", "1,169".into()),
        ("replicates", "5".into()),
        ("steps", "300".into()),
        ("lr", d.lr.to_string()),
        ("seed", "0".into()),
        ("scales", "2".into()),
        ("base_width", "8".into()),
        ("workers", "1".into()),
    ])?;
    let base = TrainConfig {
        lr: config.f64("lr"),
        steps: config.usize("steps"),
        seed: config.u64("seed"),
        ..d
    };
    base.validate()?;
    let spec = UnetSpec {
        scales: config.usize("scales"),
        base_width: config.usize("base_width"),
        ..UnetSpec::denoiser()
    };
    let images: Vec<Tensor> = load_dataset(&args.data)?
        .into_iter()
        .map(|s| s.noisy)
        .collect();
    prepare_out_file(&args.out, args.force)?;
    let study = mask_study(
        &images,
        &config.usize_list("mask_counts"),
        config.usize("replicates"),
        spec,
        &base,
        config.usize("workers").max(1),
    )?;
    write_text(&args.out, &study.to_csv())?;
    echo_config(&parent_dir(&args.out), &config, "mask-study")?;
    for s in &study.summary {
        eprintln!(
            "mask_count {:>4}: final-quarter variance {:.4e}, final mean loss {:.4e}",
            s.mask_count, s.variance, s.final_mean_loss
        );
    }
    Ok(())
}
