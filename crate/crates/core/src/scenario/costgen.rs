// placeholder — filled in once the control loop exists
