"""create run registry tables

Revision ID: 4c1e7f0b9a2d
Revises: 
Create Date: 2026-10-19 10:12:41.518203

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '4c1e7f0b9a2d'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table(
        'known_runs',
        sa.Column('run_id', sa.String(), nullable=False),
        sa.Column('command', sa.String(), nullable=False),
        sa.Column('config_hash', sa.String(), nullable=False),
        sa.Column('output_dir', sa.String(), nullable=False),
        sa.Column('status', sa.String(), nullable=False),
        sa.Column('manifest', sa.Text(), nullable=True),
        sa.Column('created_at', sa.DateTime(), nullable=False),
        sa.Column('finished_at', sa.DateTime(), nullable=True),
        sa.PrimaryKeyConstraint('run_id', name=op.f('pk_known_runs')),
    )
    op.create_table(
        'superposition_samples',
        sa.Column('sweep_id', sa.String(), nullable=False),
        sa.Column('sample_index', sa.Integer(), nullable=False),
        sa.Column('first_sector', sa.Integer(), nullable=False),
        sa.Column('second_sector', sa.Integer(), nullable=False),
        sa.Column('si_items', sa.Float(), nullable=False),
        sa.Column('si_all', sa.Float(), nullable=False),
        sa.Column('class_items', sa.String(), nullable=False),
        sa.Column('class_all', sa.String(), nullable=False),
        sa.ForeignKeyConstraint(['sweep_id'], ['known_runs.run_id'],
                                name=op.f('fk_superposition_samples_sweep_id_known_runs')),
        sa.PrimaryKeyConstraint('sweep_id', 'sample_index', name=op.f('pk_superposition_samples')),
    )


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_table('superposition_samples')
    op.drop_table('known_runs')
