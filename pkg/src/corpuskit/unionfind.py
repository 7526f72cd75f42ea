class UnionFind:
    """Disjoint sets over arbitrary hashable items.

    Path compression (halving) plus union by size. Items are registered on
    first sight, so ``find`` on an unknown item creates a singleton.
    """

    def __init__(self, items=()):
        self.parent = {}
        self.size = {}
        for item in items:
            self.add(item)

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        self.add(x)
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def connected(self, a, b):
        return self.find(a) == self.find(b)

    def groups(self):
        """Components as sorted lists, ordered by their smallest member."""
        out = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return sorted((sorted(g) for g in out.values()), key=lambda g: g[0])

    def __len__(self):
        return len(self.parent)
