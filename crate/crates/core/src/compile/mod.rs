//! Schema generators for two high-level policy styles: a component
//! hierarchy with up/down scoping, and role-based protection domains.

mod hierarchy;
mod rbac;

pub use hierarchy::{compile_hierarchy, HierarchyPolicy, DOWN, UP};
pub use rbac::{
    compile_rbac, rbac_oracle, RbacPolicy, BUS, DEV_DOWN, DEV_UP, PUB_DOWN, PUB_UP, SUB_DOWN, SUB_UP,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("device `{0}` cannot be a parent")]
    DeviceAsParent(String),
    #[error("`{0}` cannot be its own parent")]
    SelfParent(String),
    #[error("cycle through `{0}`")]
    Cycle(String),
    #[error("name `{0}` is used twice")]
    NameClash(String),
}
