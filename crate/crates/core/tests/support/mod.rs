pub mod fd_checks;
pub mod mock_bridge;
