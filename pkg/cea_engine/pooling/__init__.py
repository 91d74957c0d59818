from cea_engine.pooling.rubin import EstimateDraw, PooledEstimate, pool

__all__ = ['EstimateDraw', 'PooledEstimate', 'pool']
