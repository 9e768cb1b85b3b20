"""Dynamic replanning under sensing uncertainty on occupancy-grid roadmaps."""
