//! Shared fixtures for the benchmarks.

use odontoreg::camera::{project, IntrinsicConventions, Point2, Point3};
use odontoreg::synth::{generate_subject, render_case, CameraSampler, OcclusionLevel, Subject, SyntheticCase};

pub fn intrinsics() -> IntrinsicConventions {
    IntrinsicConventions::for_image(320, 240)
}

/// A level-B synthetic case with its subject.
pub fn region_case() -> (Subject, SyntheticCase) {
    let subject = generate_subject(1, 1.5).expect("valid perturbation");
    let case = render_case(&subject, &CameraSampler::default(), OcclusionLevel::B, &intrinsics(), 2)
        .expect("camera in frame");
    (subject, case)
}

/// Noiseless landmark pairs of a synthetic case.
pub fn landmark_pairs() -> Vec<(Point3, Point2)> {
    let (subject, case) = region_case();
    let ic = intrinsics();
    subject
        .landmarks
        .entries()
        .iter()
        .map(|l| (l.position, project(&l.position, &case.camera, &ic).expect("in front")))
        .collect()
}
