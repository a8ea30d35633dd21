//! Task cross-entropy, probe distillation with attentive layer weights, and
//! the analytic efficiency loss.

mod cost;
mod kd;

pub use cost::{
    build_cost_table, child_efficiency, child_flops, child_params, cost_report, efficiency_loss,
    efficiency_loss_var, reference_rows, ChildCost, CostReport, CostTable, OpCost, ParamBreakdown,
    ReferenceRow,
};
pub use kd::{
    attentive_kd_loss, attentive_kd_value, attentive_weights, kd_instance_loss, layer_map,
    total_loss, LossConfig, TeacherTargets,
};
