"""Walk one agent forward and watch its explored map and frontier grow.

Sensing marks every cell within line-of-sight radius 2 as explored.
Frontier cells are explored free cells adjacent to unexplored free space;
they are the candidate goals every baseline planner chooses from.
"""
from gridexplore import Action, MapSpec, generate_map, spawn_agents
from gridexplore.perception import ExplorationState, frontier_cells, sense

grid = generate_map(MapSpec(width=15, height=15, rooms=(4, 9), seed=3))
pose = spawn_agents(grid, n_agents=1, seed=11)[0]
state = ExplorationState.empty(n_agents=1, grid=grid)


def show(step: int) -> None:
    frontier = set(frontier_cells(grid, state.merged))
    lines = []
    for y in range(grid.height):
        row = []
        for x in range(grid.width):
            if (x, y) == (pose.x, pose.y):
                row.append("A")
            elif (x, y) in frontier:
                row.append("F")
            elif grid.is_wall((x, y)) and state.merged[y, x]:
                row.append("#")
            elif state.merged[y, x]:
                row.append("·")
            else:
                row.append(" ")
        lines.append("".join(row))
    explored = int(state.merged.sum())
    print(f"step {step}: explored {explored} cells, "
          f"{len(frontier)} frontier cells")
    print("\n".join(lines))
    print()


result = sense(grid, state, agent_id=0, pose=pose)
print(f"first sense reveals {int(result.new_to_agent.sum())} cells")
show(0)

for step in range(1, 7):
    ahead = pose.applied(Action.FORWARD)
    if not grid.in_bounds(ahead.cell) or grid.is_wall(ahead.cell):
        pose = pose.applied(Action.TURN_LEFT)
        continue
    pose = ahead
    sense(grid, state, agent_id=0, pose=pose)
show(6)
