mod common;

use bevfuse::bev::QueryMode;
use bevfuse::fusion::{FusionKind, ModalityMask};

use common::{pipeline_gradcheck, tiny_config};

#[test]
fn composed_pipeline_passes_gradcheck_for_every_fusion() {
    for kind in FusionKind::ALL {
        let mut cfg = tiny_config();
        cfg.model.fusion = kind;
        let r = pipeline_gradcheck(&cfg, ModalityMask::BOTH, 3);
        assert!(r.passes(1e-4), "{kind:?}: {r:?}");
    }
}

#[test]
fn pipeline_gradcheck_under_dropout_and_separate_queries() {
    let mut cfg = tiny_config();
    cfg.model.queries = QueryMode::Separate;
    for mask in [ModalityMask::LIDAR_ONLY, ModalityMask::CAMERA_ONLY] {
        let r = pipeline_gradcheck(&cfg, mask, 5);
        assert!(r.passes(1e-4), "{mask:?}: {r:?}");
    }
}

