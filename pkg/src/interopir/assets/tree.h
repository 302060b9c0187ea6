typedef struct tree {
    int         label;
    tree_ptr    left;
    tree_ptr    right;
} tree_node, *tree_ptr;
extern tree_ptr MakeTree (int depth);
