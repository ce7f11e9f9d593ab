# package marker for routes
