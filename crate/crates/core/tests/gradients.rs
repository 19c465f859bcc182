use deepseg::gradcheck::{block_suite, op_suite, suite_blocks, NamedReport, TOLERANCE};

fn assert_all_pass(reports: &[NamedReport]) {
    let failed: Vec<_> = reports.iter().filter(|r| !r.report.passes(TOLERANCE)).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn every_primitive_layer_passes() {
    for seed in [1, 17] {
        assert_all_pass(&op_suite(seed).unwrap());
    }
}

#[test]
fn every_block_family_passes() {
    for seed in [2, 29] {
        let reports = block_suite(seed).unwrap();
        assert_eq!(reports.len(), suite_blocks().len());
        assert_all_pass(&reports);
    }
}
