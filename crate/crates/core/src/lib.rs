//! Model, control and simulation for a three-finger, two-actuator hand with
//! tactile fingers.

pub mod grasp_controller;
pub mod hand_model;
pub mod servo_bus;
pub mod tactile_sim;
pub mod world_sim;
