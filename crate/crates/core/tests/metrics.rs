mod common;

use std::cell::RefCell;

use common::oracles::{icosphere, len, lens_iou, linear_label, uniform_sphere};
use occseg::evaluation::{
    chamfer_l1, chamfer_l1_points, cls_accuracy, extract_mesh, part_iou, part_miou, segment_mesh,
    shape_part_iou, volumetric_iou, OracleModel, Predictor, ShapeModel, ShapeOracle,
};
use occseg::geometry::{make_dataset, Aabb, Axis, FamilySpec, LabeledShape, Point, Primitive};
use occseg::rng::stream;
use occseg::Result;

fn sphere(center: Point, r: f64) -> LabeledShape {
    LabeledShape::generate(0, 1, vec![Primitive::sphere(center, r, 0).unwrap()], 512, &mut stream(1, &[])).unwrap()
}

/// Predicts the complement of a shape.
struct Complement<'a>(&'a LabeledShape);

impl Predictor for Complement<'_> {
    fn occupancy_probability(&self, points: &[Point]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|&p| if self.0.occupancy(p) { 0.0 } else { 1.0 }).collect())
    }
    fn part_labels(&self, points: &[Point]) -> Result<Vec<u16>> {
        Ok(vec![0; points.len()])
    }
}

/// Constant part label; remembers every point it was asked about.
struct Constant {
    label: u16,
    seen: RefCell<Vec<Point>>,
}

impl Constant {
    fn new(label: u16) -> Self {
        Constant { label, seen: RefCell::new(Vec::new()) }
    }
}

impl Predictor for Constant {
    fn occupancy_probability(&self, points: &[Point]) -> Result<Vec<f64>> {
        Ok(vec![1.0; points.len()])
    }
    fn part_labels(&self, points: &[Point]) -> Result<Vec<u16>> {
        self.seen.borrow_mut().extend_from_slice(points);
        Ok(vec![self.label; points.len()])
    }
}

#[test]
fn oracle_iou_is_one_and_complement_zero() {
    let shape = sphere([0.0; 3], 0.4);
    let domain = shape.bbox().padded(0.2);
    let oracle = ShapeOracle::new(&shape);
    assert_eq!(volumetric_iou(&oracle, &shape, domain, 20_000, 0.5, 3).unwrap(), 1.0);
    assert_eq!(volumetric_iou(&Complement(&shape), &shape, domain, 20_000, 0.5, 3).unwrap(), 0.0);
}

#[test]
fn offset_sphere_iou_matches_lens_volume() {
    let r = 0.5;
    let gt = sphere([0.0; 3], r);
    let shifted = sphere([r, 0.0, 0.0], r);
    let domain = Aabb { min: [-r, -r, -r], max: [2.0 * r, r, r] };
    let expected = lens_iou(r, r);
    assert!((expected - 5.0 / 27.0).abs() < 1e-12);
    let got = volumetric_iou(&ShapeOracle::new(&shifted), &gt, domain, 100_000, 0.5, 4).unwrap();
    assert!((got - expected).abs() < 0.01, "iou {got} vs lens {expected}");
    // Symmetric in prediction and ground truth.
    let back = volumetric_iou(&ShapeOracle::new(&gt), &shifted, domain, 100_000, 0.5, 4).unwrap();
    assert!((back - got).abs() < 1e-12);
}

#[test]
fn chamfer_of_identical_meshes_is_zero_and_symmetric() {
    let a = icosphere([0.0; 3], 1.0, 3);
    assert_eq!(chamfer_l1(&a, &a, 5000, 5).unwrap(), 0.0);
    let b = icosphere([0.1, 0.0, 0.0], 0.9, 3);
    assert_eq!(chamfer_l1(&a, &b, 5000, 5).unwrap(), chamfer_l1(&b, &a, 5000, 5).unwrap());
    assert!(chamfer_l1(&a, &Default::default(), 10, 5).is_err());
}

#[test]
fn offset_unit_spheres_match_dense_oracle() {
    let d = 0.2;
    let a = icosphere([0.0; 3], 1.0, 5);
    let b = icosphere([d, 0.0, 0.0], 1.0, 5);
    let got = chamfer_l1(&a, &b, 100_000, 6).unwrap();

    // Exact distance from a point of sphere A to sphere B, averaged over 10^6
    // uniform points; the B-to-A term is the same by symmetry.
    let mut rng = stream(7, &[]);
    let n = 1_000_000;
    let oracle: f64 = (0..n)
        .map(|_| {
            let u = uniform_sphere(&mut rng);
            (len([u[0] - d, u[1], u[2]]) - 1.0).abs()
        })
        .sum::<f64>()
        / n as f64;
    // Roughly d times E|cos| = d/2.
    assert!((oracle - d / 2.0).abs() < 0.1 * d);
    assert!((got - oracle).abs() < 0.05 * oracle, "chamfer {got} vs oracle {oracle}");
}

#[test]
fn extracted_unit_sphere_is_accurate() {
    let shape = sphere([0.0; 3], 1.0);
    let domain = shape.bbox().padded(0.1);
    let extracted = extract_mesh(&ShapeOracle::new(&shape), domain, 64, 0.5).unwrap();
    let cell = extracted.cell[0];
    assert!(extracted.mesh.is_watertight());
    for v in &extracted.mesh.vertices {
        assert!((len(*v) - 1.0).abs() <= 2.0 * cell);
    }
    let mut rng = stream(8, &[]);
    let analytic: Vec<Point> = (0..20_000).map(|_| uniform_sphere(&mut rng)).collect();
    let samples = extracted.mesh.sample_surface(20_000, &mut stream(9, &[])).unwrap();
    let cd = chamfer_l1_points(&samples, &analytic).unwrap();
    assert!(cd < cell, "chamfer {cd} vs cell {cell}");
}

#[test]
fn lower_threshold_grows_the_volume() {
    let shape = sphere([0.0; 3], 0.5);
    let domain = shape.bbox().padded(0.3);
    let oracle = ShapeOracle { shape: &shape, sharpness: 10.0 };
    let volumes: Vec<f64> = [0.8, 0.5, 0.2]
        .iter()
        .map(|&tau| extract_mesh(&oracle, domain, 32, tau).unwrap().mesh.signed_volume())
        .collect();
    assert!(volumes[0] < volumes[1] && volumes[1] < volumes[2], "{volumes:?}");
}

#[test]
fn oracle_segmentation_of_a_dumbbell_mesh() {
    let prims = vec![
        Primitive::sphere([-0.3, 0.0, 0.0], 0.17, 0).unwrap(),
        Primitive::cylinder([0.0; 3], Axis::X, 0.07, 0.3, 1).unwrap(),
        Primitive::sphere([0.3, 0.0, 0.0], 0.17, 2).unwrap(),
    ];
    let shape = LabeledShape::generate(0, 3, prims, 2048, &mut stream(10, &[])).unwrap();
    let oracle = ShapeOracle { shape: &shape, sharpness: 40.0 };
    let extracted = extract_mesh(&oracle, shape.bbox().padded(0.05), 48, 0.5).unwrap();
    let labels = segment_mesh(&oracle, &extracted).unwrap();
    let agree = extracted
        .mesh
        .vertices
        .iter()
        .zip(&labels)
        .filter(|(v, &l)| linear_label(&shape, **v) == l)
        .count();
    let frac = agree as f64 / labels.len() as f64;
    assert!(frac >= 0.95, "agreement {frac}");
    assert_eq!(labels, segment_mesh(&oracle, &extracted).unwrap());
}

#[test]
fn absent_part_predicted_by_nobody_scores_one() {
    // Class schema has parts {0, 1}; this instance only has part 0.
    let shape = LabeledShape::generate(0, 2, vec![Primitive::sphere([0.0; 3], 0.3, 0).unwrap()], 256, &mut stream(11, &[])).unwrap();
    let iou = shape_part_iou(&Constant::new(0), &shape, 2000, 12).unwrap().unwrap();
    assert_eq!(iou, 1.0);
    // Predicting the absent part is penalised on both parts.
    let iou = shape_part_iou(&Constant::new(1), &shape, 2000, 12).unwrap().unwrap();
    assert_eq!(iou, 0.0);
}

#[test]
fn majority_part_iou_matches_hand_confusion_counts() {
    let prims = vec![
        Primitive::sphere([-0.2, 0.0, 0.0], 0.3, 0).unwrap(),
        Primitive::sphere([0.25, 0.0, 0.0], 0.2, 1).unwrap(),
    ];
    let shape = LabeledShape::generate(0, 2, prims, 1024, &mut stream(13, &[])).unwrap();
    let predictor = Constant::new(0);
    let iou = shape_part_iou(&predictor, &shape, 5000, 14).unwrap().unwrap();

    let seen = predictor.seen.borrow();
    assert_eq!(seen.len(), 5000);
    // Only interior points are scored.
    assert!(seen.iter().all(|&p| shape.occupancy(p)));
    let n0 = seen.iter().filter(|&&p| linear_label(&shape, p) == 0).count();
    assert!(n0 > 2500, "part 0 should be the majority");
    // Part 0: TP = n0, union = all points. Part 1: no TP, union = its GT.
    let expected = (n0 as f64 / 5000.0 + 0.0) / 2.0;
    assert!((iou - expected).abs() < 1e-12, "{iou} vs {expected}");
}

#[test]
fn part_iou_confusion_fixture() {
    let gt = [0, 0, 0, 1, 1, 2];
    let pred = [0, 1, 0, 1, 0, 2];
    // part 0: TP 2, union |{0,1,2,4}| = 4; part 1: TP 1, union 3; part 2: 1/1.
    let expected = (2.0 / 4.0 + 1.0 / 3.0 + 1.0) / 3.0;
    assert!((part_iou(&gt, &pred, 3) - expected).abs() < 1e-12);
    // A fourth schema part absent everywhere scores one.
    let expected4 = (2.0 / 4.0 + 1.0 / 3.0 + 1.0 + 1.0) / 4.0;
    assert!((part_iou(&gt, &pred, 4) - expected4).abs() < 1e-12);
}

#[test]
fn perfect_segmentation_gives_unit_miou() {
    let spec: FamilySpec = "dumbbell,cross,table".parse().unwrap();
    let shapes = make_dataset(&spec, 6, 15).unwrap();
    let clouds = vec![Vec::new(); shapes.len()];
    let m = part_miou(&OracleModel::default(), &shapes, &clouds, 500, 16).unwrap();
    assert_eq!(m.miou, 1.0);
    assert_eq!(m.per_class.len(), 3);
    assert!(m.per_class.values().all(|&v| v == 1.0));
}

/// Guesses the class from the primitive count, `count % 3`.
struct ByPrimitiveCount;

impl ShapeModel for ByPrimitiveCount {
    fn predictor<'a>(&'a self, shape: &'a LabeledShape, _: &[[f32; 3]]) -> Result<Box<dyn Predictor + 'a>> {
        Ok(Box::new(ShapeOracle::new(shape)))
    }
    fn predict_class(&self, shape: &LabeledShape, _: &[[f32; 3]]) -> Result<usize> {
        Ok(shape.primitives().len() % 3)
    }
}

struct AlwaysZero;

impl ShapeModel for AlwaysZero {
    fn predictor<'a>(&'a self, shape: &'a LabeledShape, _: &[[f32; 3]]) -> Result<Box<dyn Predictor + 'a>> {
        Ok(Box::new(ShapeOracle::new(shape)))
    }
    fn predict_class(&self, _: &LabeledShape, _: &[[f32; 3]]) -> Result<usize> {
        Ok(0)
    }
}

#[test]
fn accuracy_fixtures() {
    let spec: FamilySpec = "spheres,dumbbell,table".parse().unwrap();
    let shapes = make_dataset(&spec, 9, 17).unwrap();
    let clouds = vec![Vec::new(); shapes.len()];
    assert_eq!(cls_accuracy(&OracleModel::default(), &shapes, &clouds).unwrap(), 1.0);
    assert_eq!(cls_accuracy(&AlwaysZero, &shapes, &clouds).unwrap(), 1.0 / 3.0);

    let ten = make_dataset(&spec, 10, 18).unwrap();
    let clouds = vec![Vec::new(); ten.len()];
    // spheres: 2 primitives -> 2 (class 0, wrong); dumbbell: 3 -> 0 (class
    // 1, wrong); table: 5 -> 2 (class 2, right). 10 shapes split 4/3/3.
    let mut hand = 0;
    for s in &ten {
        if s.primitives().len() % 3 == s.class_label() as usize {
            hand += 1;
        }
    }
    assert_eq!(hand, 3);
    assert_eq!(cls_accuracy(&ByPrimitiveCount, &ten, &clouds).unwrap(), 0.3);
}
