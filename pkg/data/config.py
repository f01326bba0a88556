config = {
    # Large metropolitan area, the default regime
    "city": {
        "grid":       {"rows": 256, "cols": 256, "spacing": 60.0},
        "world":      {"rho": 90.0, "kappa": 4.0, "sigma_obs": 0.1},
        "trajectory": {"mode": "random-walk", "speed": 30.0, "turn_rate": 0.1, "steps": 400},
        "filter": {
            "particles":      30000,
            "init_offset":    1300.0,   # meters between the cloud center and the true start
            "init_sigma":     900.0,
            "odometry_noise": 0.02,     # fraction of step length
            "heading_noise":  0.01,     # fraction of the true heading change
            "strategy":       "systematic",
            "ess_threshold":  0.98,
        },
    },

    # Small urban drive with a tight prior
    "kitti": {
        "grid":       {"rows": 32, "cols": 32, "spacing": 60.0},
        "world":      {"rho": 90.0, "kappa": 4.0, "sigma_obs": 0.1},
        "trajectory": {"mode": "random-walk", "speed": 15.0, "turn_rate": 0.2, "steps": 34},
        "filter": {
            "particles":   5000,
            "init_offset": 80.0,
            "init_sigma":  50.0,
        },
    },

    # Pose-aware vs orientation-blind comparison
    "ablation": {
        "grid":       {"rows": 64, "cols": 64, "spacing": 60.0},
        "world":      {"rho": 90.0, "kappa": 4.0, "sigma_obs": 0.1},
        "trajectory": {"mode": "random-walk", "speed": 20.0, "turn_rate": 0.1, "steps": 150},
        "filter": {
            "particles":   5000,
            "init_offset": 600.0,
            "init_sigma":  300.0,
            "measurement": {"sigma": 0.15},
        },
    },

    # Riverside road: the camera sees only water until the road turns inland
    "river": {
        "grid":  {"rows": 40, "cols": 40, "spacing": 60.0},
        "world": {"rho": 90.0, "kappa": 4.0, "sigma_obs": 0.1,
                  "mask_cols": [19, 20], "floor_score": None},
        "trajectory": {
            "mode":      "waypoints",
            "waypoints": [[1170.0, 600.0], [1170.0, 1800.0], [2100.0, 1800.0]],
            "speed":     6.0,       # about 215 steps on the water, then 140 inland
        },
        "filter": {
            "particles":    500,
            "init_offset":  200.0,
            "init_bearing": 3.141592653589793,     # cloud centered west of the river
            "init_sigma":   200.0,
            "measurement":  {"sigma": 0.1},
        },
    },
}
