use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use msbprune::accel::{AccelRequest, ConvAccelerator};
use msbprune::conv::conv2d_with_masks;
use msbprune::io::{
    dataset_stats, write_csv, IdxImages, MnistSet, ReportRow, Split, WeightContainer,
};
use msbprune::lenet::{
    evaluate, infer as infer_image, map_images, quantize_model, train_float, EvalReport,
    FloatLeNet, LeNet5Model, ScalePlan, TrainConfig, REPORT_LAYERS,
};
use msbprune::{conv2d, ConvLayerSpec, ConvMode, PruneThreshold, QuantTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{
    ensure_dir, fractional_errors, histogram, median, write_grid_csv, write_json, write_pgm,
    write_rows,
};
use crate::{GlobalArgs, SplitArg};

fn load_split(dir: &Path, split: SplitArg) -> CliResult<MnistSet> {
    Ok(match split {
        SplitArg::Train => MnistSet::load(dir, Split::Train)?,
        SplitArg::Test => MnistSet::load(dir, Split::Test)?,
        SplitArg::All => {
            let mut train = MnistSet::load(dir, Split::Train)?;
            let test = MnistSet::load(dir, Split::Test)?;
            train.images.pixels.extend_from_slice(&test.images.pixels);
            train.labels.extend_from_slice(&test.labels);
            let IdxImages { rows, cols, pixels } = train.images;
            MnistSet::new(IdxImages { rows, cols, pixels }, train.labels)?
        }
    })
}

fn limited(set: MnistSet, limit: Option<usize>) -> MnistSet {
    match limit {
        Some(n) if n < set.len() => set.truncated(n),
        _ => set,
    }
}

/// File-name friendly threshold label: `f:0.05` -> `f0.05`.
fn file_label(t: &PruneThreshold) -> String {
    t.label().replace(':', "")
}

fn parse_ints<const N: usize>(text: &str, what: &str) -> CliResult<[i32; N]> {
    let values: Vec<i32> = text
        .split(',')
        .map(|s| s.trim().parse::<i32>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    values.try_into().map_err(|v: Vec<i32>| {
        CliError::Config(format!("{what} needs {N} values, got {}", v.len()))
    })
}

/// Nonzero coefficients in `[-127, 127]`, so every product of a nonzero
/// pixel is live.
pub fn random_kernel(seed: u64) -> [i32; 9] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| {
        let m = rng.gen_range(1..=127);
        if rng.gen_bool(0.5) {
            -m
        } else {
            m
        }
    })
}

pub fn mnist_stats(g: &GlobalArgs, split: SplitArg) -> CliResult<()> {
    let set = load_split(&g.data_dir, split)?;
    let per_image = set.images.rows * set.images.cols;
    let s = dataset_stats(&set.images.pixels, per_image)?;
    let out = ensure_dir(&g.out)?;
    write_json(&out.join("mnist_stats.json"), &s)?;
    write_rows(&out.join("mnist_stats.csv"), &[&s])?;
    println!("images               {}", s.images);
    println!(
        "zero pixels / image  mean {:.2}  std {:.2}  min {}  max {}",
        s.mean_zero_pixels, s.std_zero_pixels, s.min_zero_pixels, s.max_zero_pixels
    );
    println!("zero fraction        {:.2}%", 100.0 * s.zero_fraction);
    println!(
        "pixel mean / std     {:.2} / {:.2}",
        s.pixel_mean, s.pixel_std
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct DemoRow {
    mode: String,
    threshold: String,
    t_int: Option<u32>,
    exact: u64,
    nonzero: u64,
    performed: u64,
    mean_frac_error: f64,
    median_frac_error: f64,
}

#[derive(Debug, Serialize)]
struct DemoSetRow {
    mode: String,
    threshold: String,
    images: usize,
    mean_exact: f64,
    mean_nonzero: f64,
    mean_performed: f64,
    median_frac_error: f64,
}

fn single_channel_layer(kernel: [i32; 9]) -> CliResult<ConvLayerSpec> {
    Ok(ConvLayerSpec::new(
        QuantTensor::new(vec![1, 1, 3, 3], kernel.to_vec(), 0).map_err(msbprune::Error::from)?,
        QuantTensor::new(vec![1], vec![0], 0).map_err(msbprune::Error::from)?,
    )
    .map_err(msbprune::Error::from)?)
}

fn raw_image(set: &MnistSet, pixels: &[u8]) -> CliResult<QuantTensor> {
    let data = pixels.iter().map(|&p| i32::from(p)).collect();
    Ok(
        QuantTensor::new(vec![1, set.images.rows, set.images.cols], data, 0)
            .map_err(msbprune::Error::from)?,
    )
}

pub fn conv_demo(
    g: &GlobalArgs,
    index: usize,
    split: SplitArg,
    kernel: Option<&str>,
    thresholds: &[PruneThreshold],
    bins: usize,
    set_images: Option<usize>,
) -> CliResult<()> {
    let kernel = match kernel {
        Some(k) => parse_ints::<9>(k, "--kernel")?,
        None => random_kernel(g.seed),
    };
    let set = load_split(&g.data_dir, split)?;
    if index >= set.len() {
        return Err(CliError::Config(format!(
            "--image {index} out of range ({} images)",
            set.len()
        )));
    }
    let out = ensure_dir(&g.out)?;
    let layer = single_channel_layer(kernel)?;
    let input = raw_image(&set, set.image(index))?;
    let (h, w) = layer.output_dims(set.images.rows, set.images.cols);

    let mut modes = vec![ConvMode::Exact, ConvMode::ZeroSkip];
    modes.extend(thresholds.iter().map(|&t| ConvMode::Approx(t)));

    let (exact, _) = conv2d(&input, &layer, ConvMode::Exact).map_err(msbprune::Error::from)?;
    write_pgm(&out.join("exact.pgm"), w, h, exact.data())?;
    write_grid_csv(&out.join("exact.csv"), w, exact.data())?;

    println!("kernel {kernel:?}, image {index}");
    let mut rows = Vec::new();
    for &mode in &modes {
        let (y, k) = conv2d(&input, &layer, mode).map_err(msbprune::Error::from)?;
        let errors = fractional_errors(exact.data(), y.data());
        if let ConvMode::Approx(t) = mode {
            let name = file_label(&t);
            write_pgm(&out.join(format!("approx_{name}.pgm")), w, h, y.data())?;
            write_grid_csv(&out.join(format!("approx_{name}.csv")), w, y.data())?;
            // error distribution over pixels with a nonzero exact value
            let live: Vec<f64> = errors
                .iter()
                .zip(exact.data())
                .filter(|(_, &e)| e != 0)
                .map(|(&v, _)| v)
                .collect();
            write_rows(
                &out.join(format!("errors_{name}.csv")),
                &histogram(&live, bins),
            )?;
        }
        let row = DemoRow {
            mode: mode.name().to_string(),
            threshold: mode.threshold().map(|t| t.label()).unwrap_or_default(),
            t_int: mode.threshold().map(|t| t.t_int()),
            exact: k.exact_total,
            nonzero: k.nonzero_total,
            performed: k.performed,
            mean_frac_error: errors.iter().sum::<f64>() / errors.len() as f64,
            median_frac_error: median(&errors),
        };
        println!(
            "{:>10} {:>8}  performed {:>5} / {}  mean err {:.4}",
            row.mode, row.threshold, row.performed, row.exact, row.mean_frac_error
        );
        rows.push(row);
    }
    write_rows(&out.join("counts.csv"), &rows)?;

    if let Some(n) = set_images {
        let subset = limited(set, if n == 0 { None } else { Some(n) });
        let mut set_rows = Vec::new();
        for &mode in &modes {
            let per_image = map_images(&subset, g.workers, |pixels| {
                let x = raw_image(&subset, pixels)
                    .map_err(|e| msbprune::Error::Model(e.to_string()))?;
                let (e, _) = conv2d(&x, &layer, ConvMode::Exact)?;
                let (y, k) = conv2d(&x, &layer, mode)?;
                let live: Vec<f64> = fractional_errors(e.data(), y.data())
                    .into_iter()
                    .zip(e.data())
                    .filter(|(_, &v)| v != 0)
                    .map(|(err, _)| err)
                    .collect();
                Ok((k, live))
            })?;
            let count = per_image.len().max(1) as f64;
            let all_errors: Vec<f64> = per_image
                .iter()
                .flat_map(|(_, e)| e.iter().copied())
                .collect();
            let row = DemoSetRow {
                mode: mode.name().to_string(),
                threshold: mode.threshold().map(|t| t.label()).unwrap_or_default(),
                images: per_image.len(),
                mean_exact: per_image
                    .iter()
                    .map(|(k, _)| k.exact_total as f64)
                    .sum::<f64>()
                    / count,
                mean_nonzero: per_image
                    .iter()
                    .map(|(k, _)| k.nonzero_total as f64)
                    .sum::<f64>()
                    / count,
                mean_performed: per_image
                    .iter()
                    .map(|(k, _)| k.performed as f64)
                    .sum::<f64>()
                    / count,
                median_frac_error: median(&all_errors),
            };
            println!(
                "set {:>10} {:>8}  mean performed {:>9.3}  median err {:.4}",
                row.mode, row.threshold, row.mean_performed, row.median_frac_error
            );
            set_rows.push(row);
        }
        write_rows(&out.join("counts_set.csv"), &set_rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    config: TrainConfig,
    checksum: String,
    test_accuracy: f64,
    weights: PathBuf,
}

pub fn train(g: &GlobalArgs, cfg: &TrainConfig, weights: Option<PathBuf>) -> CliResult<()> {
    let train = MnistSet::load(&g.data_dir, Split::Train)?;
    let test = MnistSet::load(&g.data_dir, Split::Test)?;
    let out = ensure_dir(&g.out)?;
    let model = train_float(&train, cfg)?;
    let path = weights.unwrap_or_else(|| out.join(format!("float_{}.lnw", cfg.activation)));
    model.to_container().save(&path)?;
    let summary = TrainSummary {
        config: *cfg,
        checksum: format!("{:016x}", model.checksum()),
        test_accuracy: model.accuracy(&test),
        weights: path.clone(),
    };
    write_json(
        &out.join(format!("train_{}.json", cfg.activation)),
        &summary,
    )?;
    println!(
        "float test accuracy {:.4}, checksum {}, saved {}",
        summary.test_accuracy,
        summary.checksum,
        path.display()
    );
    Ok(())
}

fn load_container(path: &Path) -> CliResult<WeightContainer> {
    WeightContainer::load(path).map_err(|e| match e {
        msbprune::error::DataError::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn is_quantized(c: &WeightContainer) -> bool {
    c.get("meta.scale_plan").is_some()
}

/// Loads a quantized container, or quantizes a float one with the default plan.
fn load_model(path: &Path) -> CliResult<LeNet5Model> {
    let c = load_container(path)?;
    if is_quantized(&c) {
        Ok(LeNet5Model::from_container(&c)?)
    } else {
        let f = FloatLeNet::from_container(&c)?;
        Ok(quantize_model(&f, ScalePlan::for_activation(f.activation))?)
    }
}

#[derive(Debug, Serialize)]
struct QuantizeSummary {
    images: usize,
    float_accuracy: f64,
    exact_accuracy: f64,
    drop_pp: f64,
    plan: ScalePlan,
    weights: PathBuf,
}

pub fn quantize(
    g: &GlobalArgs,
    weights: &Path,
    output: Option<PathBuf>,
    max_drop: f64,
    limit: Option<usize>,
) -> CliResult<()> {
    let c = load_container(weights)?;
    if is_quantized(&c) {
        return Err(CliError::Config(format!(
            "{} is already quantized",
            weights.display()
        )));
    }
    let float = FloatLeNet::from_container(&c)?;
    let plan = ScalePlan::for_activation(float.activation);
    let model = quantize_model(&float, plan)?;
    let out = ensure_dir(&g.out)?;
    let path = output.unwrap_or_else(|| out.join(format!("quant_{}.lnw", float.activation)));
    model.to_container().save(&path)?;

    let test = limited(MnistSet::load(&g.data_dir, Split::Test)?, limit);
    let float_accuracy = float.accuracy(&test);
    let exact = evaluate(&test, &model, ConvMode::Exact, g.workers)?;
    let summary = QuantizeSummary {
        images: test.len(),
        float_accuracy,
        exact_accuracy: exact.accuracy,
        drop_pp: 100.0 * (float_accuracy - exact.accuracy),
        plan,
        weights: path.clone(),
    };
    write_json(
        &out.join(format!("quantize_{}.json", float.activation)),
        &summary,
    )?;
    println!(
        "float {:.4}  integer exact {:.4}  drop {:+.2} pp  saved {}",
        summary.float_accuracy,
        summary.exact_accuracy,
        summary.drop_pp,
        path.display()
    );
    if summary.drop_pp > max_drop {
        return Err(CliError::Assertion(format!(
            "quantization costs {:.2} pp, more than {max_drop} pp",
            summary.drop_pp
        )));
    }
    Ok(())
}

pub fn infer(
    g: &GlobalArgs,
    weights: &Path,
    mode: ConvMode,
    image: Option<usize>,
    limit: Option<usize>,
) -> CliResult<()> {
    let model = load_model(weights)?;
    let test = MnistSet::load(&g.data_dir, Split::Test)?;
    let out = ensure_dir(&g.out)?;
    if let Some(i) = image {
        if i >= test.len() {
            return Err(CliError::Config(format!(
                "--image {i} out of range ({} images)",
                test.len()
            )));
        }
        let r = infer_image(test.image(i), &model, mode)?;
        write_json(&out.join(format!("infer_image{i}.json")), &r)?;
        println!(
            "image {i}: label {}, predicted {}",
            test.labels[i], r.predicted
        );
        for l in &r.per_layer {
            println!(
                "  {:>3} exact {:>6} nonzero {:>6} performed {:>6} sparsity {:.3}",
                l.name,
                l.counters.exact_total,
                l.counters.nonzero_total,
                l.counters.performed,
                l.sparsity
            );
        }
        return Ok(());
    }
    let test = limited(test, limit);
    let r = evaluate(&test, &model, mode, g.workers)?;
    write_json(
        &out.join(format!("infer_{}.json", mode.label().replace(':', ""))),
        &r,
    )?;
    print_eval(&r);
    Ok(())
}

fn print_eval(r: &EvalReport) {
    let layers: Vec<String> = r
        .layers
        .iter()
        .filter(|l| l.mean_exact > 0.0)
        .map(|l| format!("{} {:.1}", l.name, l.mean_performed))
        .collect();
    println!(
        "{:>9} {:>7}  accuracy {:.4}  MACs {:>9.1} ({:5.2}%)  [{}]",
        r.mode,
        r.threshold
            .map(|f| format!("f:{f}"))
            .or(r.t_int.map(|t| format!("t:{t}")))
            .unwrap_or_default(),
        r.accuracy,
        r.mean_total_performed,
        100.0 * r.mean_total_performed / r.mean_total_exact.max(1.0),
        layers.join(", ")
    );
}

fn report_rows(r: &EvalReport, label: &str) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = REPORT_LAYERS
        .iter()
        .filter_map(|name| r.layer(name))
        .map(|l| ReportRow {
            layer: l.name.clone(),
            mode: r.mode.clone(),
            threshold: label.to_string(),
            exact: l.mean_exact,
            nonzero: l.mean_nonzero,
            performed: l.mean_performed,
            sparsity: Some(l.sparsity_mean),
            accuracy: None,
        })
        .collect();
    rows.push(ReportRow {
        layer: "total".into(),
        mode: r.mode.clone(),
        threshold: label.to_string(),
        exact: r.mean_total_exact,
        nonzero: r.mean_total_nonzero,
        performed: r.mean_total_performed,
        sparsity: None,
        accuracy: Some(r.accuracy),
    });
    rows
}

pub fn sweep(
    g: &GlobalArgs,
    weights: &Path,
    thresholds: &[PruneThreshold],
    limit: Option<usize>,
) -> CliResult<()> {
    let model = load_model(weights)?;
    let test = limited(MnistSet::load(&g.data_dir, Split::Test)?, limit);
    let out = ensure_dir(&g.out)?;
    let mut modes = vec![ConvMode::Exact, ConvMode::ZeroSkip];
    modes.extend(thresholds.iter().map(|&t| ConvMode::Approx(t)));

    let mut reports = Vec::with_capacity(modes.len());
    let mut rows = Vec::new();
    for mode in modes {
        let r = evaluate(&test, &model, mode, g.workers)?;
        print_eval(&r);
        rows.extend(report_rows(
            &r,
            &mode.threshold().map(|t| t.label()).unwrap_or_default(),
        ));
        reports.push(r);
    }
    if reports[0].predictions != reports[1].predictions {
        return Err(CliError::Assertion(
            "zero-skip predictions differ from exact".into(),
        ));
    }
    let act = model.activation();
    write_csv(&out.join(format!("sweep_{act}.csv")), &rows)?;
    write_json(&out.join(format!("sweep_{act}.json")), &reports)?;
    Ok(())
}

fn random_window(seed: u64) -> [i32; 16] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    std::array::from_fn(|_| {
        if rng.gen_bool(0.25) {
            0
        } else {
            rng.gen_range(-4096..=4096)
        }
    })
}

pub fn fsm_trace(
    g: &GlobalArgs,
    window: Option<&str>,
    kernel: Option<&str>,
    thresholds: &[PruneThreshold],
) -> CliResult<()> {
    let window = match window {
        Some(w) => parse_ints::<16>(w, "--window")?,
        None => random_window(g.seed),
    };
    let kernel = match kernel {
        Some(k) => parse_ints::<9>(k, "--kernel")?,
        None => random_kernel(g.seed),
    };
    if thresholds.is_empty() {
        return Err(CliError::Config("--thresholds is empty".into()));
    }
    let out = ensure_dir(&g.out)?;
    let layer = single_channel_layer(kernel)?;
    let input =
        QuantTensor::new(vec![1, 4, 4], window.to_vec(), 0).map_err(msbprune::Error::from)?;

    let memory = window.to_vec();
    let mut acc = ConvAccelerator::with_kernel(memory.as_slice(), kernel);
    println!("window {window:?}\nkernel {kernel:?}");
    for &t in thresholds {
        acc.issue(AccelRequest::window(0), t)?;
        let cycles = acc.run_to_done()?;
        let outputs = acc.read_outputs()?;
        let kept = acc.kept_sets();

        let (y, _, masks) = conv2d_with_masks(&input, &layer, ConvMode::Approx(t))
            .map_err(msbprune::Error::from)?;
        if y.data() != outputs {
            return Err(CliError::Assertion(format!(
                "{t}: accelerator {outputs:?} vs engine {:?}",
                y.data()
            )));
        }
        if masks
            .iter()
            .zip(&kept)
            .any(|(m, k)| m.as_slice() != k.as_slice())
        {
            return Err(CliError::Assertion(format!(
                "{t}: kept sets differ from the engine"
            )));
        }

        let path = out.join(format!("fsm_trace_{}.jsonl", file_label(&t)));
        let mut file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        for ev in acc.trace() {
            let line = serde_json::to_string(ev).expect("trace events serialize");
            writeln!(file, "{line}").map_err(|e| CliError::io(&path, e))?;
        }
        let performed: usize = kept.iter().map(|k| k.iter().filter(|&&b| b).count()).sum();
        println!(
            "{t}: {cycles} cycles, outputs {outputs:?}, {performed}/36 products, trace {}",
            path.display()
        );
        acc.acknowledge()?;
    }
    Ok(())
}
