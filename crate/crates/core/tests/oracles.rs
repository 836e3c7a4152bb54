mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use common::*;
use pose3d::datapipe::dataset::{read_clip, write_clip, Dataset, Split};
use pose3d::datapipe::synth::{generate_synthetic, marker_color, synth_clip, SynthOptions, SyntheticSceneSpec};
use pose3d::datapipe::{
    center_pelvis, crop_square, gcn, resize_bilinear, sample_windows, BBox, FrameStream, WindowOptions,
};
use pose3d::inference::{
    average_windows, export_report, parse_report_csv, predict_clip, ActionReport, Evaluation, PosePredictor,
    ReportFormat,
};
use pose3d::layers::Conv3dLayer;
use pose3d::training::{mpjpe, sample_gradient, OptimizerState};
use pose3d::weights::{load_weights, save_weights};
use pose3d::{ArchitectureConfig, Error, NetworkParams, RngState, Tensor};

#[test]
fn tensor_construction_examples() {
    assert_eq!(Tensor::<f64>::new(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
    assert_eq!(Tensor::<f64>::new(&[1], 7.5).unwrap().data(), &[7.5]);
    assert_eq!(Tensor::<f64>::new(&[5, 3, 128, 128], 0.0).unwrap().len(), 5 * 3 * 128 * 128);
    assert!(matches!(Tensor::<f64>::new(&[], 0.0), Err(Error::InvalidShape { .. })));
    assert!(matches!(Tensor::<f64>::new(&[3, 0], 0.0), Err(Error::InvalidShape { .. })));
}

#[test]
fn elementwise_and_reduce_examples() {
    let t = |v: &[f64]| Tensor::from_vec(&[v.len()], v.to_vec()).unwrap();
    assert_eq!(t(&[1.0, 2.0]).add(&t(&[3.0, 4.0])).unwrap(), t(&[4.0, 6.0]));
    assert_eq!(t(&[2.0, 3.0]).mul(&t(&[0.5, 2.0])).unwrap(), t(&[1.0, 6.0]));
    let x = t(&[0.1, -3.7]);
    assert!(x.sub(&x).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(t(&[1.0]).add(&t(&[1.0, 2.0])).is_err());

    let m = Tensor::from_vec(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    assert_eq!(m.reduce_mean(&[0, 1]).unwrap().data(), &[4.0]);
    assert_eq!(m.reduce_mean(&[]).unwrap(), m);
    let m = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m.reduce_mean(&[1]).unwrap().data(), &[1.5, 3.5]);
    assert!(matches!(m.reduce_mean(&[1, 1]), Err(Error::Axis { .. })));
    assert!(matches!(m.reduce_mean(&[2]), Err(Error::Axis { .. })));
}

#[test]
fn xavier_unit_bound() {
    let t = pose3d::tensor::xavier_init::<f64>(&[1000], 3, 3, &mut RngState::new(4)).unwrap();
    assert!(t.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn conv_matches_flipped_kernel_sum_on_spec_shapes() {
    let mut rng = RngState::new(31);
    let x = random_tensor(&[2, 4, 6, 6], &mut rng, -1.0, 1.0);
    let layer = Conv3dLayer::new(
        random_tensor(&[3, 2, 2, 3, 3], &mut rng, -1.0, 1.0),
        random_tensor(&[3], &mut rng, -1.0, 1.0),
    )
    .unwrap();
    let ours = layer.forward(&x).unwrap();
    let oracle = flipped_kernel_conv(&x, &layer.kernel, &layer.bias);
    assert!(ours.max_abs_diff(&oracle).unwrap() < 1e-12);
}

#[test]
fn nesterov_matches_scalar_recurrence() {
    let (lr, mu) = (0.1, 0.9);
    let mut theta = Tensor::from_vec(&[1], vec![1.0]).unwrap();
    let mut opt = OptimizerState::new(&[&theta], lr, mu);
    let expected = scalar_nesterov_quadratic(1.0, lr, mu, 5);
    for want in expected {
        let ahead = opt.lookahead(&[&theta]).unwrap();
        let grad = ahead[0].scale(2.0);
        opt.step(&mut [&mut theta], &[grad]).unwrap();
        assert!((theta.data()[0] - want).abs() < 1e-12);
    }
}

/// Direct four-tap bilinear formula with pixel-centre alignment.
fn bilinear_oracle(img: &Tensor<f64>, target: usize) -> Tensor<f64> {
    let &[c, h, w] = img.shape() else { panic!() };
    let mut out = Tensor::zeros(&[c, target, target]).unwrap();
    let coord = |d: usize, src: usize| {
        let s = ((d as f64 + 0.5) * src as f64 / target as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(src - 1), s - lo as f64)
    };
    for ch in 0..c {
        for y in 0..target {
            let (y0, y1, fy) = coord(y, h);
            for x in 0..target {
                let (x0, x1, fx) = coord(x, w);
                let v = |yy, xx| img.get(&[ch, yy, xx]).unwrap();
                let value = (1.0 - fy) * (1.0 - fx) * v(y0, x0)
                    + (1.0 - fy) * fx * v(y0, x1)
                    + fy * (1.0 - fx) * v(y1, x0)
                    + fy * fx * v(y1, x1);
                out.set(&[ch, y, x], value).unwrap();
            }
        }
    }
    out
}

#[test]
fn resize_matches_bilinear_oracle() {
    let ramp = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| (v * 10) as f64).collect()).unwrap();
    for target in [2, 3, 7, 128] {
        let ours = resize_bilinear(&ramp, target).unwrap();
        assert!(ours.max_abs_diff(&bilinear_oracle(&ramp, target)).unwrap() < 1e-10);
    }
    let mut rng = RngState::new(32);
    let noise = random_tensor(&[3, 9, 9], &mut rng, 0.0, 255.0);
    assert!(resize_bilinear(&noise, 128)
        .unwrap()
        .max_abs_diff(&bilinear_oracle(&noise, 128))
        .unwrap()
        < 1e-10);
}

#[test]
fn crop_at_left_edge_zero_fills() {
    // 8x8 image whose pixel value encodes its position as 10*row + col + 1
    let img = Tensor::from_vec(&[1, 8, 8], (0..64).map(|v| (10 * (v / 8) + v % 8 + 1) as f64).collect()).unwrap();
    let crop = crop_square(&img, BBox { x: 0, y: 2, w: 2, h: 6 }).unwrap();
    assert_eq!(crop.shape(), &[1, 6, 6]);
    for r in 0..6 {
        let row: Vec<f64> = (0..6).map(|c| crop.get(&[0, r, c]).unwrap()).collect();
        let base = (10 * (r + 2) + 1) as f64;
        assert_eq!(row, vec![0.0, 0.0, base, base + 1.0, base + 2.0, base + 3.0], "row {r}");
    }
}

fn scene() -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn seventeen_frames_give_one_window() {
    let (clip, _) = synth_clip(&scene(), 0, 17).unwrap();
    let opts = WindowOptions {
        input_size: 32,
        ..Default::default()
    };
    let set = sample_windows(&clip, &opts, &mut RngState::new(1)).unwrap();
    assert_eq!(set.samples.len(), 1);
    assert_eq!(set.samples[0].frame_indices, vec![0, 4, 8, 12, 16]);

    let (short, _) = synth_clip(&scene(), 0, 16).unwrap();
    let set = sample_windows(&short, &opts, &mut RngState::new(1)).unwrap();
    assert!(set.samples.is_empty());
    assert_eq!(set.too_short, 1);
}

#[test]
fn long_clip_windows_are_distinct_and_pelvis_zero() {
    let (clip, _) = synth_clip(&scene(), 1, 1000).unwrap();
    let opts = WindowOptions {
        count: Some(10),
        input_size: 32,
        ..Default::default()
    };
    let a = sample_windows(&clip, &opts, &mut RngState::new(9)).unwrap();
    let b = sample_windows(&clip, &opts, &mut RngState::new(9)).unwrap();
    assert_eq!(a.samples.len(), 10);
    let starts: Vec<usize> = a.samples.iter().map(|s| s.frame_indices[0]).collect();
    assert_eq!(starts, b.samples.iter().map(|s| s.frame_indices[0]).collect::<Vec<_>>());
    let mut unique = starts.clone();
    unique.dedup();
    assert_eq!(unique.len(), 10);
    for s in &a.samples {
        assert!(s.frame_indices.windows(2).all(|w| w[1] == w[0] + 4));
        for f in 0..5 {
            for k in 0..3 {
                assert_eq!(s.target.get(&[f, 0, k]).unwrap(), 0.0);
            }
        }
        // every channel of the stack is standardized
        let block = s.input.len() / 3;
        for ch in s.input.data().chunks(block) {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn center_pelvis_translation_invariance() {
    let mut rng = RngState::new(33);
    let j = random_tensor(&[5, 17, 3], &mut rng, -900.0, 900.0);
    let shift = Tensor::from_vec(&[5, 17, 3], [10.0, 20.0, 30.0].repeat(85)).unwrap();
    let a = center_pelvis(&j).unwrap();
    let b = center_pelvis(&j.add(&shift).unwrap()).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    let zeroed = center_pelvis(&a).unwrap();
    assert_eq!(zeroed, a);
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synthetic_dataset_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        clips: 1,
        frames: 5,
        val_clips: 0,
        test_clips: 0,
    };
    let summary = generate_synthetic(&scene(), &opts, tmp.path()).unwrap();
    assert_eq!(summary.short_clips.len(), 1);
    let ds = Dataset::open(tmp.path()).unwrap();
    assert_eq!(ds.manifest.clips.len(), 1);
    let clip = ds.load(&ds.manifest.clips[0]).unwrap();
    assert_eq!(clip.len(), 5);
    assert_eq!(clip.joints.shape(), &[5, 17, 3]);
    let frames_dir = ds.clip_dir(&ds.manifest.clips[0]).join("frames");
    assert_eq!(std::fs::read_dir(frames_dir).unwrap().count(), 5);
}

#[test]
fn synthetic_dataset_is_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = SynthOptions {
        clips: 3,
        frames: 12,
        val_clips: 1,
        test_clips: 1,
    };
    generate_synthetic(&scene(), &opts, a.path()).unwrap();
    generate_synthetic(&scene(), &opts, b.path()).unwrap();
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert_eq!(fa.len(), 3 * (12 + 3) + 1);
    assert_eq!(fa, fb);
    let ds = Dataset::open(a.path()).unwrap();
    let splits: Vec<Split> = ds.manifest.clips.iter().map(|c| c.split).collect();
    assert_eq!(splits, vec![Split::Train, Split::Val, Split::Test]);
}

#[test]
fn rendered_markers_reproject_within_one_pixel() {
    let spec = scene();
    let mut checked = 0;
    for index in 0..4 {
        let (clip, meta) = synth_clip(&spec, index, 30).unwrap();
        for (f, img) in clip.frames.iter().enumerate().step_by(7) {
            for j in 0..17 {
                let color = marker_color(j);
                let hits: Vec<(f64, f64)> = img
                    .enumerate_pixels()
                    .filter(|(_, _, p)| **p == color)
                    .map(|(x, y, _)| (f64::from(x) + 0.5, f64::from(y) + 0.5))
                    .collect();
                if hits.is_empty() {
                    continue; // hidden behind a nearer marker
                }
                let n = hits.len() as f64;
                let (u, v) = hits.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
                let p = [0, 1, 2].map(|k| clip.joints.get(&[f, j, k]).unwrap());
                let [pu, pv] = meta.intrinsics.project(p);
                let err = ((u - pu).powi(2) + (v - pv).powi(2)).sqrt();
                assert!(err <= 1.0, "clip {index} frame {f} joint {j}: {err:.2} px");
                checked += 1;
            }
        }
    }
    assert!(checked > 150, "only {checked} markers visible");
}

#[test]
fn dataset_read_back_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let (clip, meta) = synth_clip(&scene(), 2, 9).unwrap();
    write_clip(&tmp.path().join("c"), &clip, &meta).unwrap();
    let back = read_clip(&tmp.path().join("c"), &clip.id).unwrap();
    assert_eq!(back.joints, clip.joints);
    assert_eq!(back.boxes, clip.boxes);
    assert_eq!(back.frames, clip.frames);
    assert_eq!(back.action, clip.action);
    assert!(matches!(
        read_clip(&tmp.path().join("missing"), "x"),
        Err(Error::DatasetNotFound(_))
    ));
    assert!(Dataset::open(&tmp.path().join("nowhere"))
        .unwrap_err()
        .to_string()
        .starts_with("dataset not found: "));
}

#[test]
fn averaging_is_the_plain_mean() {
    let mut rng = RngState::new(34);
    let n = 11;
    let outputs: Vec<Tensor<f64>> = (0..n - 4).map(|_| random_tensor(&[5, 17, 3], &mut rng, -800.0, 800.0)).collect();
    let avg = average_windows(&outputs, n).unwrap();
    for (f, (pose, count)) in avg.iter().enumerate() {
        let contributions: Vec<&[f64]> = (0..outputs.len())
            .filter(|&s| s <= f && f < s + 5)
            .map(|s| &outputs[s].data()[(f - s) * 51..(f - s + 1) * 51])
            .collect();
        assert_eq!(*count, contributions.len());
        for i in 0..51 {
            let mean = contributions.iter().map(|c| c[i]).sum::<f64>() / *count as f64;
            assert!((pose.data()[i] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn averaging_divides_noise_variance_by_coverage() {
    let mut rng = RngState::new(35);
    let sigma2: f64 = 4.0;
    let half = (3.0 * sigma2).sqrt(); // uniform on [-half, half] has variance sigma2
    let trials = 4000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let outputs: Vec<Tensor<f64>> = (0..5).map(|_| random_tensor(&[5, 1, 3], &mut rng, -half, half)).collect();
        let avg = average_windows(&outputs, 9).unwrap();
        assert_eq!(avg[4].1, 5);
        let v = avg[4].0.data()[0];
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / trials as f64;
    let var = sum_sq / trials as f64 - mean * mean;
    let expected = sigma2 / 5.0;
    assert!((var / expected - 1.0).abs() < 0.2, "variance {var}, expected {expected}");
}

struct Constant(Tensor<f64>);

impl PosePredictor for Constant {
    fn joints(&self) -> usize {
        17
    }

    fn predict_window(&self, _: &Tensor<f64>) -> pose3d::Result<Tensor<f64>> {
        Ok(self.0.clone())
    }
}

fn stream(n: usize) -> FrameStream {
    FrameStream {
        clip_id: "s".into(),
        frame_indices: (0..n).map(|i| 4 * i).collect(),
        frames: (0..n).map(|i| Tensor::new(&[3, 4, 4], i as f64).unwrap()).collect(),
    }
}

#[test]
fn predict_clip_coverage_and_order() {
    let mut rng = RngState::new(36);
    let c = random_tensor(&[255], &mut rng, -300.0, 300.0);
    let model = Constant(c.clone());
    let preds = predict_clip(&model, &stream(9)).unwrap();
    assert_eq!(preds.len(), 9);
    assert!(preds.windows(2).all(|w| w[0].frame < w[1].frame));
    assert_eq!(preds[0].count, 1);
    assert_eq!(preds[4].count, 5);
    for p in &preds {
        let pos = p.frame / 4;
        let starts: Vec<usize> = (0..5).filter(|&s| s <= pos && pos < s + 5).collect();
        assert_eq!(p.count, starts.len());
        for i in 0..51 {
            let mean = starts.iter().map(|&s| c.data()[(pos - s) * 51 + i]).sum::<f64>() / starts.len() as f64;
            assert!((p.joints.data()[i] - mean).abs() < 1e-12);
        }
    }
    let five = predict_clip(&model, &stream(5)).unwrap();
    assert!(five.iter().all(|p| p.count == 1));
    assert!(matches!(
        predict_clip(&model, &stream(4)),
        Err(Error::TooShort { frames: 4, .. })
    ));
}

#[test]
fn position_invariant_constant_output_passes_through_unchanged() {
    let mut rng = RngState::new(37);
    let pose = random_tensor(&[17, 3], &mut rng, -300.0, 300.0);
    let window = Tensor::from_vec(&[255], pose.data().repeat(5)).unwrap();
    let preds = predict_clip(&Constant(window), &stream(12)).unwrap();
    assert!(preds.iter().all(|p| p.joints == pose));
}

#[test]
fn report_export_shapes() {
    let rows: Vec<(String, f64, Option<usize>)> = (0..15).map(|i| (format!("A{i}"), 100.0 + i as f64, Some(10))).collect();
    let eval = Evaluation::summarize(rows, None).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("r.csv");
    export_report(&eval.table(), &path, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert_eq!(parse_report_csv(&text).unwrap(), eval.table());
    assert!(export_report(&[] as &[ActionReport], &path, ReportFormat::Csv).is_err());
    export_report(&eval.table(), &tmp.path().join("r.txt"), ReportFormat::PrettyTable).unwrap();
}

#[test]
fn weights_from_another_architecture_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ArchitectureConfig::reduced([2, 2, 2, 2, 2], 45, 17);
    let b = ArchitectureConfig::reduced([2, 2, 3, 2, 2], 45, 17);
    let net = NetworkParams::<f32>::build(&a, &mut RngState::new(1)).unwrap();
    let path = tmp.path().join("w.p3dw");
    save_weights(&net, &path).unwrap();
    let err = load_weights::<f32>(&path, Some(&b)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    assert!(err.to_string().contains("conv3.kernel"), "{err}");
    assert_eq!(load_weights::<f32>(&path, Some(&a)).unwrap(), net);
}

#[test]
fn repeated_sample_loss_is_non_increasing_at_small_rate() {
    let cfg = ArchitectureConfig::reduced([3, 3, 3, 3, 3], 45, 17);
    let (clip, _) = synth_clip(&scene(), 0, 17).unwrap();
    let opts = WindowOptions {
        input_size: 45,
        ..Default::default()
    };
    let sample = sample_windows(&clip, &opts, &mut RngState::new(1)).unwrap().samples.remove(0);
    let mut net = NetworkParams::<f64>::build(&cfg, &mut RngState::new(2)).unwrap();
    let mut opt = OptimizerState::new(&net.tensors(), 1e-5, 0.9);
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let ahead = NetworkParams::from_tensors(&cfg, opt.lookahead(&net.tensors()).unwrap()).unwrap();
        let (_, grads) = sample_gradient(&ahead, &sample).unwrap();
        opt.step(&mut net.tensors_mut(), &grads.tensors).unwrap();
        let pred = net.predict(&sample.input).unwrap().reshape(&[5, 17, 3]).unwrap();
        let loss = mpjpe(&pred, &sample.target).unwrap();
        assert!(loss <= last, "step {step}: {loss} > {last}");
        last = loss;
    }
}

#[test]
fn gcn_standardizes_each_channel() {
    let mut rng = RngState::new(38);
    let x = random_tensor(&[3, 5, 6, 6], &mut rng, 0.0, 255.0);
    let y = gcn(&x);
    for ch in y.data().chunks(180) {
        let mean = ch.iter().sum::<f64>() / 180.0;
        let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 180.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }
}
