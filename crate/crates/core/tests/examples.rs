//! Every example runs to completion; training examples on short budgets.

#![allow(dead_code)]

#[path = "../examples/autodiff.rs"]
mod autodiff;
#[path = "../examples/class_activation_map.rs"]
mod class_activation_map;
#[path = "../examples/desk_learning.rs"]
mod desk_learning;
#[path = "../examples/dynamic_topology.rs"]
mod dynamic_topology;
#[path = "../examples/gated_pooling.rs"]
mod gated_pooling;
#[path = "../examples/graph_oracles.rs"]
mod graph_oracles;
#[path = "../examples/modality_fusion.rs"]
mod modality_fusion;
#[path = "../examples/model_summary.rs"]
mod model_summary;
#[path = "../examples/shrec_layout.rs"]
mod shrec_layout;
#[path = "../examples/synthetic_data.rs"]
mod synthetic_data;
#[path = "../examples/temporal_branches.rs"]
mod temporal_branches;
#[path = "../examples/train_synthetic.rs"]
mod train_synthetic;
#[path = "../examples/verify_checks.rs"]
mod verify_checks;

#[test]
fn building_blocks() {
    autodiff::run_example().unwrap();
    synthetic_data::run_example().unwrap();
    shrec_layout::run_example().unwrap();
    gated_pooling::run_example().unwrap();
    dynamic_topology::run_example().unwrap();
    temporal_branches::run_example().unwrap();
    model_summary::run_example().unwrap();
}

#[test]
fn oracles() {
    graph_oracles::run_example().unwrap();
    verify_checks::run(Some("oracle")).unwrap();
}

#[test]
fn training_examples() {
    train_synthetic::run(4).unwrap();
    modality_fusion::run(2).unwrap();
    class_activation_map::run(3).unwrap();
    desk_learning::run(1).unwrap();
}
