pub mod camera;
pub mod exec;
pub mod faceswap;
pub mod gsplat;
pub mod imaging;
pub mod nerf;
pub mod optim;
pub mod pipeline;
