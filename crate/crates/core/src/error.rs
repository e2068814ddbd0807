use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error(
        "need at least 3 samples over 3 distinct sizes, got {samples} samples over {distinct_sizes} sizes"
    )]
    Underdetermined { samples: usize, distinct_sizes: usize },
    #[error("fitted transfer time for {src} -> {dst} drops to {min} s within the supported size range")]
    NegativeTransfer { src: usize, dst: usize, min: f64 },
    #[error("latency model does not cover every ordered pair of {nodes} nodes")]
    IncompleteLatency { nodes: usize },
    #[error("file size {0} B outside the supported range [1 B, 10 MB]")]
    FileSizeOutOfRange(f64),
    #[error("no base cost for task {0}")]
    MissingCost(String),
    #[error("base cost for task {0} must be positive")]
    NonPositiveCost(String),
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("invalid resource snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("invalid cluster recipe: {0}")]
    InvalidRecipe(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("cap of {cap} tasks per node on {nodes} nodes cannot hold {tasks} tasks")]
    CapInfeasible { cap: usize, nodes: usize, tasks: usize },
    #[error("profile covers {profile_tasks} tasks × {profile_nodes} nodes, expected {tasks} × {nodes}")]
    ProfileMismatch {
        tasks: usize,
        nodes: usize,
        profile_tasks: usize,
        profile_nodes: usize,
    },
    #[error("input task {task} needs a node at location {location}")]
    NoNodeAtLocation { task: String, location: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("placement covers {placed} tasks, graph has {tasks}")]
    UnassignedTask { placed: usize, tasks: usize },
    #[error("invalid input schedule: {0}")]
    InvalidSchedule(String),
    #[error("search space of {0} placements exceeds the limit of {1}")]
    SearchSpaceTooLarge(u128, u128),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}
