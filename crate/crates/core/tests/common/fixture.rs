//! On-disk inputs for end-to-end CLI runs: a 320 x 240 frame with three
//! ships, calibration rows, optical flow, slice predictions and a texture
//! image.

use super::{mul_h, rng, solve_four_point};
use mastgeoref::maskops::{BinaryMask, Rle};
use mastgeoref::motionheading::FlowField;
use mastgeoref::pipeline::imageio::encode_pgm;
use mastgeoref::scatter2d::RealMap;
use rand::Rng;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const W: u32 = 320;
pub const H: u32 = 240;
pub const IMAGE_ID: u64 = 7;

/// Pixel-to-(lon, lat) map for the fixture frame.
pub fn camera() -> [f64; 9] {
    solve_four_point(&[
        ((0.0, 239.0), (8.5700, 53.5400)),
        ((319.0, 239.0), (8.5730, 53.5400)),
        ((319.0, 100.0), (8.5790, 53.5480)),
        ((0.0, 100.0), (8.5640, 53.5480)),
    ])
}

/// `(x0, y0, x1, y1)` pixel rectangles of the three ships (exclusive ends).
pub const SHIPS: [(u32, u32, u32, u32); 3] = [(40, 150, 61, 160), (120, 170, 151, 180), (220, 140, 241, 150)];

/// Georeferencing pixel of each ship: centre column, bottom row.
pub fn ship_pixel(k: usize) -> (f64, f64) {
    let (x0, _, x1, y1) = SHIPS[k];
    (f64::from(x0 + x1 - 1) / 2.0, f64::from(y1 - 1))
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn rect_mask(w: u32, h: u32, r: (u32, u32, u32, u32)) -> BinaryMask {
    BinaryMask::from_rect(w, h, r.0, r.1, r.2, r.3).unwrap()
}

fn xywh(r: (u32, u32, u32, u32)) -> Value {
    json!([r.0, r.1, r.2 - r.0, r.3 - r.1])
}

fn polygon(r: (u32, u32, u32, u32)) -> Value {
    json!([[r.0, r.1, r.2, r.1, r.2, r.3, r.0, r.3]])
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

pub fn build() -> Fixture {
    let fx = Fixture {
        dir: tempfile::tempdir().unwrap(),
    };
    let cam = camera();

    // calibration rows over the water area, with sub-pixel survey noise
    let mut r = rng(99);
    let mut csv = String::from("pixel_x,pixel_y,lat,lon\n");
    for _ in 0..200 {
        let x: f64 = r.random_range(0.0..319.0);
        let y: f64 = r.random_range(100.0..239.0);
        let (lon, lat) = mul_h(&cam, x, y);
        let nx: f64 = r.random_range(-0.3..0.3);
        let ny: f64 = r.random_range(-0.3..0.3);
        csv.push_str(&format!("{},{},{},{}\n", x + nx, y + ny, lat, lon));
    }
    std::fs::write(fx.path("corr.csv"), csv).unwrap();

    let image = json!({"id": IMAGE_ID, "width": W, "height": H, "file_name": "frame_0007.png"});
    let runs = Rle::encode(&rect_mask(W, H, SHIPS[1]));
    let packed = Rle::encode(&rect_mask(W, H, SHIPS[2]));
    let ships = vec![
        json!({"id": 1, "image_id": IMAGE_ID, "category_id": 1, "bbox": xywh(SHIPS[0]), "score": 0.93,
               "segmentation": polygon(SHIPS[0])}),
        json!({"id": 2, "image_id": IMAGE_ID, "category_id": 2, "bbox": xywh(SHIPS[1]), "score": 0.81,
               "segmentation": {"size": [H, W], "counts": runs.counts}}),
        json!({"id": 3, "image_id": IMAGE_ID, "category_id": 1, "bbox": xywh(SHIPS[2]), "score": 0.77,
               "segmentation": {"size": [H, W], "counts": packed.to_compressed()}}),
    ];
    let mut with_bad = ships.clone();
    with_bad.push(json!({"id": 4, "image_id": IMAGE_ID, "category_id": 1, "bbox": [10, 10, 10, 10],
                         "score": 0.5, "segmentation": [[10, 10, 20, 20]]}));
    write_json(
        &fx.path("pred.json"),
        &json!({"images": [image.clone()], "annotations": with_bad}),
    );
    let mut eval_preds = ships.clone();
    eval_preds.push(json!({"id": 5, "image_id": IMAGE_ID, "category_id": 1, "bbox": [280, 20, 20, 10],
                           "score": 0.9, "segmentation": polygon((280, 20, 300, 30))}));
    write_json(
        &fx.path("pred_eval.json"),
        &json!({"images": [image.clone()], "annotations": eval_preds}),
    );

    let gts: Vec<Value> = (0..3)
        .map(|k| {
            let (px, py) = ship_pixel(k);
            let (lon, lat) = mul_h(&cam, px + 2.0, py + 1.0);
            let (class, length, range) = [(1, 35.0, 350.0), (2, 62.5, 400.0), (1, 18.0, 720.0)][k];
            json!({"id": 10 + k, "image_id": IMAGE_ID, "category_id": class,
                   "bbox": xywh(SHIPS[k]), "segmentation": polygon(SHIPS[k]),
                   "georef": {"lat": lat, "lon": lon, "length_m": length, "range_m": range}})
        })
        .collect();
    write_json(
        &fx.path("gt.json"),
        &json!({"images": [image], "annotations": gts, "categories": [{"id": 1, "name": "cargo"}, {"id": 2, "name": "tug"}]}),
    );

    let mut flow = FlowField::uniform(W, H, 0.0, 0.0).unwrap();
    for (k, v) in [(0usize, [0.0f32, -1.5]), (2, [2.0, 0.0])] {
        let (x0, y0, x1, y1) = SHIPS[k];
        for y in y0..y1 {
            for x in x0..x1 {
                flow.set(x, y, v);
            }
        }
    }
    let mut buf = Vec::new();
    flow.write_to(&mut buf).unwrap();
    std::fs::write(fx.path("frame.flow"), buf).unwrap();

    // slice predictions for a 160 x 160, 25 % overlap plan (6 slices);
    // ship 1 is seen by slices 3 and 4, ship 2 by slices 4 and 5
    std::fs::create_dir(fx.path("slices")).unwrap();
    let origins = [(0u32, 0u32), (120, 0), (160, 0), (0, 80), (120, 80), (160, 80)];
    let sightings: [&[(usize, f64)]; 6] = [&[], &[], &[], &[(0, 0.93), (1, 0.80)], &[(1, 0.84), (2, 0.70)], &[(2, 0.77)]];
    for (i, (&(ox, oy), seen)) in origins.iter().zip(sightings).enumerate() {
        if i == 2 {
            continue; // exercises the missing-file path
        }
        let anns: Vec<Value> = seen
            .iter()
            .map(|&(k, score)| {
                let (x0, y0, x1, y1) = SHIPS[k];
                let local = (x0 - ox, y0 - oy, x1 - ox, y1 - oy);
                json!({"image_id": IMAGE_ID, "category_id": 1, "bbox": xywh(local), "score": score,
                       "segmentation": polygon(local)})
            })
            .collect();
        write_json(
            &fx.path(&format!("slices/slice_{i:04}.json")),
            &json!({"images": [{"id": IMAGE_ID, "width": 160, "height": 160}], "annotations": anns}),
        );
    }

    let tex = RealMap::from_fn(32, 32, |x, y| {
        (127.0 + 60.0 * ((x as f64) * 0.7).sin() + 50.0 * ((y as f64) * 0.4 + (x as f64) * 0.2).cos()).round()
    });
    std::fs::write(fx.path("texture.pgm"), encode_pgm(&tex, 255)).unwrap();
    fx
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mastgeoref")
}

/// Runs the binary with no project configuration.
pub fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("MASTGEOREF_CONFIG")
        .output()
        .expect("binary runs")
}

pub fn run_in(fx: &Fixture, args: &[&str]) -> Output {
    let owned: Vec<String> = args
        .iter()
        .map(|a| match a.strip_prefix('@') {
            Some(name) => fx.path(name).to_string_lossy().into_owned(),
            None => a.to_string(),
        })
        .collect();
    let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    run(&refs)
}

/// Every subcommand over the fixture, as `(name, args, outputs)`. Arguments
/// starting with `@` are fixture paths.
pub fn all_commands(tag: &str) -> Vec<(&'static str, Vec<String>, Vec<String>)> {
    let o = |n: &str| format!("@{tag}_{n}");
    vec![
        (
            "calibrate",
            vec!["calibrate".into(), "--corr".into(), "@corr.csv".into(), "--out".into(), o("h.json")],
            vec![o("h.json")],
        ),
        (
            "georef",
            vec![
                "georef".into(), "--homography".into(), o("h.json"), "--pred".into(), "@pred.json".into(),
                "--out".into(), o("georef.geojson"),
            ],
            vec![o("georef.geojson")],
        ),
        (
            "heading",
            vec![
                "heading".into(), "--homography".into(), o("h.json"), "--pred".into(), "@pred.json".into(),
                "--flow".into(), "@frame.flow".into(), "--out".into(), o("heading.geojson"),
            ],
            vec![o("heading.geojson")],
        ),
        (
            "slice-plan",
            vec![
                "slice-plan".into(), "--width".into(), "320".into(), "--height".into(), "240".into(),
                "--slice-w".into(), "160".into(), "--slice-h".into(), "160".into(), "--overlap".into(),
                "0.25".into(), "--out".into(), o("plan.txt"),
            ],
            vec![o("plan.txt")],
        ),
        (
            "merge",
            vec![
                "merge".into(), "--plan".into(), o("plan.txt"), "--pred-dir".into(), "@slices".into(),
                "--nms-iou".into(), "0.5".into(), "--out".into(), o("merged.json"),
            ],
            vec![o("merged.json")],
        ),
        (
            "evaluate",
            vec![
                "evaluate".into(), "--pred".into(), "@pred_eval.json".into(), "--gt".into(), "@gt.json".into(),
                "--homography".into(), o("h.json"), "--out".into(), o("report.json"),
            ],
            vec![o("report.json")],
        ),
        (
            "scatter",
            vec![
                "scatter".into(), "--image".into(), "@texture.pgm".into(), "--scales".into(), "1".into(),
                "--orients".into(), "4".into(), "--out-dir".into(), o("scatter"),
            ],
            vec![
                o("scatter/manifest.json"),
                o("scatter/s0.rmap"),
                o("scatter/s_j0_l0.rmap"),
                o("scatter/s_j0_l3.rmap"),
            ],
        ),
    ]
}

pub fn run_all(fx: &Fixture, tag: &str) -> Vec<(&'static str, Output, Vec<Vec<u8>>)> {
    all_commands(tag)
        .into_iter()
        .map(|(name, args, outs)| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = run_in(fx, &refs);
            let bytes = outs
                .iter()
                .map(|p| std::fs::read(fx.path(p.trim_start_matches('@'))).unwrap_or_default())
                .collect();
            (name, out, bytes)
        })
        .collect()
}
