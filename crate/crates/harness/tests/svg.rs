//! The curve plot parses as XML and carries one polyline per method.

use toalign_core::train::{EpochRecord, ExperimentRecord, Method};
use toalign_harness::artifacts::render_svg;

fn record(method: Method, seed: u64, accs: &[f64]) -> ExperimentRecord {
    let epochs = accs
        .iter()
        .enumerate()
        .map(|(epoch, &target_acc)| EpochRecord {
            method,
            seed,
            epoch,
            l_cls: (epoch > 0).then_some(0.5),
            l_d: (epoch > 0).then_some(1.3),
            target_acc,
            degenerate_decomp_count: 0,
        })
        .collect();
    ExperimentRecord { method, seed, epochs }
}

fn polylines(svg: &str) -> Vec<String> {
    let doc = roxmltree::Document::parse(svg).expect("valid XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc.descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .map(|n| n.attribute("data-method").unwrap().to_owned())
        .collect()
}

#[test]
fn two_methods_give_two_polylines() {
    let records = [
        record(Method::Dann, 0, &[0.3, 0.6, 0.9]),
        record(Method::Dann, 1, &[0.4, 0.5, 0.7]),
        record(Method::TiAlignDann, 0, &[0.3, 0.3, 0.4]),
    ];
    assert_eq!(polylines(&render_svg(&records)), ["DANN", "TiAlign_DANN"]);
}

#[test]
fn empty_input_gives_axes_only() {
    let svg = render_svg(&[]);
    assert!(polylines(&svg).is_empty());
    assert!(svg.contains("<line"));
}

#[test]
fn single_epoch_curve_still_parses() {
    assert_eq!(polylines(&render_svg(&[record(Method::SourceOnly, 0, &[0.5])])).len(), 1);
}
